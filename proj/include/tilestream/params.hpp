// Copyright 2026 The tilestream Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tilestream/autodiff.hpp"
#include "tilestream/random.hpp"
#include "tilestream/tensor.hpp"

namespace tilestream {

/// Ordered collection of named trainable tensors. Iteration order is
/// insertion order; shapes are fixed once added.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  /// Throws InvalidArgument on duplicate names.
  void add(std::string name, Tensor value);

  /// Adds a tensor initialised uniformly in [-s, s], s = 1/sqrt(fan_in).
  void add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng);

  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const Tensor& operator[](std::size_t i) const { return entries_.at(i).value; }
  const Tensor& get(std::string_view name) const { return entries_[index_of(name)].value; }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  /// Replace a value; the shape must match.
  void set(std::size_t i, Tensor value);

  /// Mutable element access; shape cannot change through a span.
  std::span<double> values(std::size_t i) { return entries_.at(i).value.data(); }

  std::size_t scalar_count() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using Gradients = std::vector<Tensor>;

/// A ParameterSet placed on a tape as gradient-tracked leaves.
class BoundParameters {
 public:
  /// With `track` false the parameters enter the tape as constants, which
  /// skips gradient bookkeeping for inference.
  BoundParameters(ad::Tape& tape, const ParameterSet& params, bool track = true);

  ad::Var operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }
  ad::Var operator[](std::size_t i) const { return vars_.at(i); }

  /// Gradients aligned with the ParameterSet after tape.backward().
  Gradients gradients() const;

 private:
  ad::Tape* tape_;
  const ParameterSet* params_;
  std::vector<ad::Var> vars_;
};

/// params[i] += factor * direction[i]
void axpy(ParameterSet& params, double factor, const Gradients& direction);
Gradients zeros_like(const ParameterSet& params);
void accumulate(Gradients& into, const Gradients& g, double factor = 1.0);

/// RMSprop with a per-parameter squared-gradient accumulator.
class RmsProp {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double decay = 0.9;
    double epsilon = 1e-8;
  };

  RmsProp() : RmsProp(Options{}) {}
  explicit RmsProp(Options options);

  void step(ParameterSet& params, const Gradients& grads);

  const Options& options() const noexcept { return options_; }
  const std::vector<Tensor>& accumulators() const noexcept { return acc_; }

 private:
  Options options_;
  std::vector<Tensor> acc_;
};

/// Scalar metadata stored alongside parameters in a checkpoint.
using CheckpointMetadata = std::map<std::string, double>;

// Checkpoint container, little-endian throughout:
//   "TSPARAMS"                      8-byte magic
//   u32 version (= 1)
//   u32 metadata count, then per entry: u32 key length, key bytes, f64 value
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u64 dims[rank], f64 data[prod(dims)]
inline constexpr char kCheckpointMagic[8] = {'T', 'S', 'P', 'A', 'R', 'A', 'M', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params,
                                            const CheckpointMetadata& metadata = {});
ParameterSet decode_checkpoint(std::span<const std::uint8_t> bytes,
                               CheckpointMetadata* metadata = nullptr);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const CheckpointMetadata& metadata = {});
ParameterSet load_checkpoint(const std::filesystem::path& path,
                             CheckpointMetadata* metadata = nullptr);

}  // namespace tilestream
