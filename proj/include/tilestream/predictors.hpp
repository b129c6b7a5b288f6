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
#include <functional>
#include <span>
#include <vector>

#include "tilestream/autodiff.hpp"
#include "tilestream/geometry.hpp"
#include "tilestream/params.hpp"

namespace tilestream {

/// Per-tile viewing probability, row-major m x n, entries in [0,1].
class ProbabilityMatrix {
 public:
  ProbabilityMatrix() = default;
  explicit ProbabilityMatrix(TileGrid grid, double fill = 0.0);
  ProbabilityMatrix(TileGrid grid, std::vector<double> p);

  static ProbabilityMatrix from_tiles(const TileMatrix& tiles);

  const TileGrid& grid() const noexcept { return grid_; }
  double operator()(std::size_t r, std::size_t c) const { return p_[r * grid_.cols + c]; }
  std::span<const double> values() const noexcept { return p_; }

  friend bool operator==(const ProbabilityMatrix&, const ProbabilityMatrix&) = default;

 private:
  TileGrid grid_;
  std::vector<double> p_;
};

/// One step of predictor input: the viewed tiles at a sampling instant and
/// the (downsampled) saliency map paired with it.
struct HistoryStep {
  TileMatrix tiles;
  SaliencyMap saliency;
};

/// Chronological, oldest first.
using HistoryWindow = std::vector<HistoryStep>;

struct ConvLstmConfig {
  TileGrid grid;
  std::size_t map_height = 20;   // H'
  std::size_t map_width = 40;    // W'
  std::size_t cells = 2;
  std::size_t hidden = 8;
  std::size_t kernel = 3;
  std::size_t se_reduction = 2;
  std::size_t window = 5;

  /// Throws InvalidArgument (config-level) on inconsistent topology.
  void validate() const;
  std::size_t input_channels(std::size_t cell) const { return cell == 0 ? 2 : hidden; }
};

struct ConvLstmState {
  Tensor h;  // [hidden, H', W']
  Tensor c;  // [hidden, H', W']
};

/// Modified ConvLSTM: every cell concatenates its input with the previous
/// hidden state, applies one depthwise-separable convolution producing the
/// four gate pre-activations, re-weights them with a single SE block and
/// splits them into (i, f, o, g). A 1x1 projection, average pooling to the
/// tile grid and a sigmoid produce per-tile probabilities.
class ConvLstm {
 public:
  ConvLstm(ConvLstmConfig config, ParameterSet params);

  static ParameterSet init_params(const ConvLstmConfig& config, Rng& rng);
  static ConvLstm initialize(const ConvLstmConfig& config, std::uint64_t seed);

  const ConvLstmConfig& config() const noexcept { return config_; }
  const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& params() noexcept { return params_; }

  ProbabilityMatrix predict(const HistoryWindow& window) const;

  /// Builds the forward pass on `tape`; returns probabilities shaped [1,m,n].
  ad::Var forward(ad::Tape& tape, const BoundParameters& params, const HistoryWindow& window) const;

  struct StateVars {
    ad::Var h;
    ad::Var c;
  };
  StateVars cell_step(const BoundParameters& params, std::size_t cell, ad::Var x, StateVars prev) const;

  /// Value-level single cell step (no gradient tracking).
  ConvLstmState cell_step(std::size_t cell, const Tensor& x, const ConvLstmState& prev) const;

  /// Step input: unit-peak saliency channel + nearest-upsampled tile channel.
  Tensor encode_step(const HistoryStep& step) const;

  /// Projection + average pool + sigmoid on a final hidden state.
  ad::Var head(const BoundParameters& params, ad::Var h) const;

 private:
  void check_params() const;

  ConvLstmConfig config_;
  ParameterSet params_;
};

struct TrainingExample {
  HistoryWindow window;
  TileMatrix truth;
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  RmsProp::Options optimizer{};
  std::uint64_t seed = 1;
  /// Called after each epoch with the 0-based epoch and current parameters.
  std::function<void(std::size_t, const ParameterSet&)> on_epoch;
};

struct TrainReport {
  ParameterSet params;
  std::vector<double> epoch_loss;  // mean training BCE per epoch
  double initial_loss = 0.0;       // before the first update
};

double mean_bce(const ConvLstm& model, std::span<const TrainingExample> data);

/// Minibatch RMSprop on BCE, starting from `model`'s parameters.
TrainReport train_convlstm(const ConvLstm& model, std::span<const TrainingExample> data,
                           const TrainOptions& options);

/// Head orientation at time `t` under zero-order hold; times before the
/// first sample repeat the earliest sample.
ViewportSample head_at(std::span<const ViewportSample> trace, double t);

/// `count` samples spaced 1/sf apart ending at `t_now`, oldest first. Each
/// sample carries the requested timestamp (clamped to >= 0).
std::vector<ViewportSample> sample_history(std::span<const ViewportSample> trace, double t_now,
                                           double sf, std::size_t count);

/// Where the inputs of a history window come from.
struct WindowSource {
  std::span<const ViewportSample> head;
  std::span<const SaliencyMap> chunk_saliency;  // one map per chunk, already downsampled
  double chunk_length = 1.0;
};

/// Pairs each sampled viewport with the saliency map of the chunk covering
/// `sample time + horizon`; a boundary instant belongs to the chunk that
/// ends there, so a window ending at a chunk start with horizon L sees the
/// map of that chunk.
HistoryWindow build_history_window(const WindowSource& source, double t_now, double sf,
                                   std::size_t window, double horizon, const TileGrid& grid,
                                   const FovSpec& fov);

/// One example per chunk c >= first_chunk: the window ending at the chunk
/// start and the union of tiles viewed during the chunk.
std::vector<TrainingExample> make_chunk_examples(const WindowSource& source, std::size_t first_chunk,
                                                 std::size_t chunk_count, double sf, std::size_t window,
                                                 const TileGrid& grid, const FovSpec& fov);

/// Samples whose time falls in [begin, end).
std::vector<ViewportSample> samples_between(std::span<const ViewportSample> trace, double begin, double end);

/// Least-squares linear extrapolation of (unwrapped) yaw and pitch.
struct LinearFit {
  double yaw_slope = 0.0, yaw_intercept = 0.0;
  double pitch_slope = 0.0, pitch_intercept = 0.0;
};

LinearFit fit_linear_trajectory(std::span<const ViewportSample> history);
/// Extrapolated sample at `history.back().t + horizon`, yaw rewrapped and
/// pitch clamped.
ViewportSample lr_extrapolate(std::span<const ViewportSample> history, double horizon);
ProbabilityMatrix lr_predict(std::span<const ViewportSample> history, double horizon,
                             const TileGrid& grid, const FovSpec& fov);

}  // namespace tilestream
