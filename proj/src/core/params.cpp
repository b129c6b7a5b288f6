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

#include "tilestream/params.hpp"

#include <cmath>
#include <cstring>

#include "tilestream/binary_io.hpp"
#include "tilestream/error.hpp"

namespace tilestream {

void ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw InvalidArgument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value)});
}

void ParameterSet::add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  for (double& v : t.data()) v = rng.uniform(-s, s);
  add(std::move(name), std::move(t));
}

bool ParameterSet::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParameterSet::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter: " + std::string(name));
  return it->second;
}

void ParameterSet::set(std::size_t i, Tensor value) {
  Entry& e = entries_.at(i);
  if (e.value.shape() != value.shape())
    throw InvalidArgument("parameter " + e.name + ": shape " + shape_string(value.shape()) +
                          " differs from " + shape_string(e.value.shape()));
  e.value = std::move(value);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

BoundParameters::BoundParameters(ad::Tape& tape, const ParameterSet& params, bool track)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (const auto& e : params.entries())
    vars_.push_back(track ? tape.variable(e.value) : tape.constant(e.value));
}

Gradients BoundParameters::gradients() const {
  Gradients g;
  g.reserve(vars_.size());
  for (const ad::Var& v : vars_) g.push_back(tape_->grad(v));
  return g;
}

void axpy(ParameterSet& params, double factor, const Gradients& direction) {
  if (direction.size() != params.size()) throw InvalidArgument("axpy: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], direction[i], "axpy");
    auto v = params.values(i);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += factor * direction[i][j];
  }
}

Gradients zeros_like(const ParameterSet& params) {
  Gradients g;
  for (const auto& e : params.entries()) g.emplace_back(e.value.shape(), 0.0);
  return g;
}

void accumulate(Gradients& into, const Gradients& g, double factor) {
  if (into.size() != g.size()) throw InvalidArgument("accumulate: gradient count mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) {
    require_same_shape(into[i], g[i], "accumulate");
    for (std::size_t j = 0; j < g[i].size(); ++j) into[i][j] += factor * g[i][j];
  }
}

RmsProp::RmsProp(Options options) : options_(options) {
  if (!(options_.learning_rate > 0.0)) throw InvalidArgument("rmsprop: learning rate must be > 0");
  if (!(options_.decay > 0.0 && options_.decay < 1.0))
    throw InvalidArgument("rmsprop: decay must lie in (0,1)");
  if (options_.epsilon < 0.0) throw InvalidArgument("rmsprop: epsilon must be >= 0");
}

void RmsProp::step(ParameterSet& params, const Gradients& grads) {
  if (grads.size() != params.size()) throw InvalidArgument("rmsprop: gradient count mismatch");
  if (acc_.empty())
    for (const auto& e : params.entries()) acc_.emplace_back(e.value.shape(), 0.0);
  const double rho = options_.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads[i], "rmsprop");
    auto p = params.values(i);
    Tensor& a = acc_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      a[j] = rho * a[j] + (1.0 - rho) * g * g;
      if (g != 0.0) p[j] -= options_.learning_rate * g / (std::sqrt(a[j]) + options_.epsilon);
    }
  }
}

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params,
                                            const CheckpointMetadata& metadata) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(metadata.size()));
  for (const auto& [key, value] : metadata) {
    w.str(key);
    w.f64(value);
  }
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.u64(d);
    w.bytes(e.value.data().data(), e.value.size() * sizeof(double));
  }
  return w.take();
}

ParameterSet decode_checkpoint(std::span<const std::uint8_t> bytes, CheckpointMetadata* metadata) {
  io::ByteReader r(bytes);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw DataError("not a parameter checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  CheckpointMetadata meta;
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string key = r.str();
    meta[key] = r.f64();
  }
  ParameterSet params;
  for (std::uint32_t n = r.u32(), i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw DataError("checkpoint tensor " + name + ": bad rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0 || d > (1u << 28)) throw DataError("checkpoint tensor " + name + ": bad dimension");
    }
    std::vector<double> data(shape_size(shape));
    r.bytes(data.data(), data.size() * sizeof(double));
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw DataError("trailing bytes after checkpoint payload");
  if (metadata) *metadata = std::move(meta);
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const CheckpointMetadata& metadata) {
  io::write_file(path, encode_checkpoint(params, metadata));
}

ParameterSet load_checkpoint(const std::filesystem::path& path, CheckpointMetadata* metadata) {
  const auto bytes = io::read_file(path);
  return decode_checkpoint(bytes, metadata);
}

}  // namespace tilestream
