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

#include "tilestream/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tilestream/error.hpp"

namespace tilestream {

ProbabilityMatrix::ProbabilityMatrix(TileGrid grid, double fill)
    : ProbabilityMatrix(grid, std::vector<double>(grid.tile_count(), fill)) {}

ProbabilityMatrix::ProbabilityMatrix(TileGrid grid, std::vector<double> p)
    : grid_(grid), p_(std::move(p)) {
  if (p_.size() != grid_.tile_count()) throw InvalidArgument("probability matrix size mismatch");
  for (double v : p_)
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("probability outside [0,1]");
}

ProbabilityMatrix ProbabilityMatrix::from_tiles(const TileMatrix& tiles) {
  std::vector<double> p(tiles.cells().begin(), tiles.cells().end());
  return ProbabilityMatrix(tiles.grid(), std::move(p));
}

void ConvLstmConfig::validate() const {
  if (cells < 1) throw InvalidArgument("convlstm: need at least one cell");
  if (hidden < 1) throw InvalidArgument("convlstm: hidden channels must be positive");
  if (kernel % 2 == 0) throw InvalidArgument("convlstm: kernel size must be odd");
  if (window < 1) throw InvalidArgument("convlstm: window must be >= 1");
  if (se_reduction < 1 || (4 * hidden) % se_reduction != 0)
    throw InvalidArgument("convlstm: SE reduction " + std::to_string(se_reduction) +
                          " does not divide " + std::to_string(4 * hidden) + " gate channels");
  if (map_height == 0 || map_width == 0 || map_height % grid.rows != 0 || map_width % grid.cols != 0)
    throw InvalidArgument("convlstm: map " + std::to_string(map_height) + "x" +
                          std::to_string(map_width) + " is not an integer multiple of the " +
                          std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
}

namespace {

std::string cell_key(std::size_t cell, const char* what) {
  return "cell" + std::to_string(cell) + "." + what;
}

}  // namespace

ParameterSet ConvLstm::init_params(const ConvLstmConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterSet p;
  const std::size_t k = cfg.kernel, gates = 4 * cfg.hidden, squeeze = gates / cfg.se_reduction;
  for (std::size_t cell = 0; cell < cfg.cells; ++cell) {
    const std::size_t cin = cfg.input_channels(cell) + cfg.hidden;
    p.add_uniform(cell_key(cell, "dw"), {cin, k, k}, k * k, rng);
    p.add_uniform(cell_key(cell, "pw"), {gates, cin}, cin, rng);
    p.add_uniform(cell_key(cell, "bias"), {gates}, cin, rng);
    p.add_uniform(cell_key(cell, "se1"), {squeeze, gates}, gates, rng);
    p.add_uniform(cell_key(cell, "se2"), {gates, squeeze}, squeeze, rng);
  }
  p.add_uniform("head.w", {1, cfg.hidden}, cfg.hidden, rng);
  p.add_uniform("head.b", {1}, cfg.hidden, rng);
  return p;
}

ConvLstm ConvLstm::initialize(const ConvLstmConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return ConvLstm(config, init_params(config, rng));
}

ConvLstm::ConvLstm(ConvLstmConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_params();
}

void ConvLstm::check_params() const {
  Rng rng(0);
  const ParameterSet expected = init_params(config_, rng);
  if (expected.size() != params_.size())
    throw InvalidArgument("convlstm: parameter count " + std::to_string(params_.size()) +
                          " does not match topology (" + std::to_string(expected.size()) + ")");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::string& name = expected.name(i);
    if (!params_.contains(name)) throw InvalidArgument("convlstm: missing parameter " + name);
    if (params_.get(name).shape() != expected[i].shape())
      throw InvalidArgument("convlstm: parameter " + name + " has shape " +
                            shape_string(params_.get(name).shape()) + ", expected " +
                            shape_string(expected[i].shape()));
  }
}

Tensor ConvLstm::encode_step(const HistoryStep& step) const {
  const std::size_t h = config_.map_height, w = config_.map_width;
  if (step.saliency.height() != h || step.saliency.width() != w)
    throw InvalidArgument("convlstm: saliency map " + std::to_string(step.saliency.height()) + "x" +
                          std::to_string(step.saliency.width()) + " does not match configured " +
                          std::to_string(h) + "x" + std::to_string(w));
  if (!(step.tiles.grid() == config_.grid)) throw InvalidArgument("convlstm: tile grid mismatch");
  Tensor x({2, h, w});
  const auto sal = step.saliency.values();
  const double peak = *std::max_element(sal.begin(), sal.end());
  const std::size_t fy = h / config_.grid.rows, fx = w / config_.grid.cols;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      x.at(0, y, xx) = peak > 0.0 ? step.saliency(y, xx) / peak : 0.0;
      x.at(1, y, xx) = step.tiles(y / fy, xx / fx);
    }
  return x;
}

ConvLstm::StateVars ConvLstm::cell_step(const BoundParameters& p, std::size_t cell, ad::Var x,
                                        StateVars prev) const {
  if (x.shape().size() != 3 || x.shape()[1] != prev.h.shape()[1] || x.shape()[2] != prev.h.shape()[2])
    throw InvalidArgument("convlstm: input spatial shape " + shape_string(x.shape()) +
                          " does not match state " + shape_string(prev.h.shape()));
  const std::size_t hd = config_.hidden;
  ad::Var z = ad::concat_channels(x, prev.h);
  ad::Var u = ad::separable_conv(z, p[cell_key(cell, "dw")], p[cell_key(cell, "pw")],
                                 p[cell_key(cell, "bias")]);
  u = ad::se_block(u, p[cell_key(cell, "se1")], p[cell_key(cell, "se2")]);
  ad::Var i = ad::sigmoid(ad::slice_channels(u, 0, hd));
  ad::Var f = ad::sigmoid(ad::slice_channels(u, hd, hd));
  ad::Var o = ad::sigmoid(ad::slice_channels(u, 2 * hd, hd));
  ad::Var g = ad::tanh(ad::slice_channels(u, 3 * hd, hd));
  ad::Var c = ad::add(ad::hadamard(f, prev.c), ad::hadamard(i, g));
  ad::Var h = ad::hadamard(o, ad::tanh(c));
  return {h, c};
}

ConvLstmState ConvLstm::cell_step(std::size_t cell, const Tensor& x, const ConvLstmState& prev) const {
  if (cell >= config_.cells) throw InvalidArgument("convlstm: cell index out of range");
  const Shape state_shape{config_.hidden, x.rank() == 3 ? x.dim(1) : 0, x.rank() == 3 ? x.dim(2) : 0};
  if (x.rank() != 3 || x.dim(0) != config_.input_channels(cell))
    throw InvalidArgument("convlstm: cell input has shape " + shape_string(x.shape()));
  if (prev.h.shape() != state_shape || prev.c.shape() != state_shape)
    throw InvalidArgument("convlstm: state shape does not match input " + shape_string(x.shape()));
  ad::Tape tape;
  BoundParameters p(tape, params_, false);
  StateVars next = cell_step(p, cell, tape.constant(x), {tape.constant(prev.h), tape.constant(prev.c)});
  return {next.h.value(), next.c.value()};
}

ad::Var ConvLstm::head(const BoundParameters& p, ad::Var h) const {
  ad::Var y = ad::pointwise_conv(h, p["head.w"], p["head.b"]);
  y = ad::avg_pool(y, config_.map_height / config_.grid.rows, config_.map_width / config_.grid.cols);
  return ad::sigmoid(y);
}

ad::Var ConvLstm::forward(ad::Tape& tape, const BoundParameters& p, const HistoryWindow& window) const {
  if (window.empty()) throw InvalidArgument("convlstm: empty history window");
  const Shape state_shape{config_.hidden, config_.map_height, config_.map_width};
  std::vector<StateVars> states(config_.cells,
                                StateVars{tape.constant(Tensor(state_shape)), tape.constant(Tensor(state_shape))});
  for (const HistoryStep& step : window) {
    ad::Var input = tape.constant(encode_step(step));
    for (std::size_t cell = 0; cell < config_.cells; ++cell) {
      states[cell] = cell_step(p, cell, input, states[cell]);
      input = states[cell].h;
    }
  }
  return head(p, states.back().h);
}

ProbabilityMatrix ConvLstm::predict(const HistoryWindow& window) const {
  ad::Tape tape;
  BoundParameters p(tape, params_, false);
  const Tensor& out = forward(tape, p, window).value();
  return ProbabilityMatrix(config_.grid, out.values());
}

namespace {

Tensor truth_tensor(const TileMatrix& truth) {
  const TileGrid& g = truth.grid();
  std::vector<double> v(truth.cells().begin(), truth.cells().end());
  return Tensor({1, g.rows, g.cols}, std::move(v));
}

}  // namespace

double mean_bce(const ConvLstm& model, std::span<const TrainingExample> data) {
  if (data.empty()) throw InvalidArgument("mean_bce: empty dataset");
  double total = 0.0;
  for (const auto& ex : data) {
    ad::Tape tape;
    BoundParameters p(tape, model.params(), false);
    total += ad::bce_loss(model.forward(tape, p, ex.window), truth_tensor(ex.truth)).value().item();
  }
  return total / static_cast<double>(data.size());
}

TrainReport train_convlstm(const ConvLstm& model, std::span<const TrainingExample> data,
                           const TrainOptions& options) {
  if (data.empty()) throw InvalidArgument("train_convlstm: empty dataset");
  if (options.batch_size == 0) throw InvalidArgument("train_convlstm: batch size must be positive");
  ConvLstm work = model;
  RmsProp opt(options.optimizer);
  Rng rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  report.initial_loss = mean_bce(work, data);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      Gradients batch = zeros_like(work.params());
      for (std::size_t k = start; k < end; ++k) {
        const TrainingExample& ex = data[order[k]];
        ad::Tape tape;
        BoundParameters p(tape, work.params());
        ad::Var loss = ad::bce_loss(work.forward(tape, p, ex.window), truth_tensor(ex.truth));
        epoch_loss += loss.value().item();
        tape.backward(loss);
        accumulate(batch, p.gradients(), 1.0 / static_cast<double>(end - start));
      }
      opt.step(work.params(), batch);
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    if (options.on_epoch) options.on_epoch(epoch, work.params());
  }
  report.params = work.params();
  return report;
}

ViewportSample head_at(std::span<const ViewportSample> trace, double t) {
  if (trace.empty()) throw InvalidArgument("empty head trace");
  auto it = std::upper_bound(trace.begin(), trace.end(), t,
                             [](double v, const ViewportSample& s) { return v < s.t; });
  const ViewportSample& s = it == trace.begin() ? trace.front() : *(it - 1);
  return {t, s.yaw, s.pitch};
}

std::vector<ViewportSample> sample_history(std::span<const ViewportSample> trace, double t_now,
                                           double sf, std::size_t count) {
  if (!(sf > 0.0)) throw InvalidArgument("sampling frequency must be positive");
  if (count == 0) throw InvalidArgument("history length must be positive");
  std::vector<ViewportSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = t_now - static_cast<double>(count - 1 - k) / sf;
    out.push_back(head_at(trace, std::max(0.0, t)));
  }
  return out;
}

std::vector<ViewportSample> samples_between(std::span<const ViewportSample> trace, double begin,
                                            double end) {
  std::vector<ViewportSample> out;
  for (const auto& s : trace)
    if (s.t >= begin && s.t < end) out.push_back(s);
  return out;
}

HistoryWindow build_history_window(const WindowSource& source, double t_now, double sf,
                                   std::size_t window, double horizon, const TileGrid& grid,
                                   const FovSpec& fov) {
  if (source.chunk_saliency.empty()) throw InvalidArgument("history window needs saliency maps");
  const auto samples = sample_history(source.head, t_now, sf, window);
  HistoryWindow out;
  out.reserve(window);
  // A target exactly on a chunk boundary belongs to the chunk ending there.
  const double slack = 1e-9;
  for (const auto& s : samples) {
    const double target = s.t + horizon;
    const double pos = std::floor(target / source.chunk_length - slack);
    auto chunk = static_cast<std::size_t>(std::max(0.0, pos));
    chunk = std::min(chunk, source.chunk_saliency.size() - 1);
    out.push_back({viewport_to_tiles(s, grid, fov), source.chunk_saliency[chunk]});
  }
  return out;
}

std::vector<TrainingExample> make_chunk_examples(const WindowSource& source, std::size_t first_chunk,
                                                 std::size_t chunk_count, double sf, std::size_t window,
                                                 const TileGrid& grid, const FovSpec& fov) {
  std::vector<TrainingExample> out;
  const double len = source.chunk_length;
  for (std::size_t c = first_chunk; c < first_chunk + chunk_count; ++c) {
    const double start = static_cast<double>(c) * len;
    const auto viewed = samples_between(source.head, start, start + len);
    if (viewed.empty()) throw DataError("head trace has no samples in chunk " + std::to_string(c));
    out.push_back({build_history_window(source, start, sf, window, len, grid, fov),
                   ground_truth_tiles(viewed, grid, fov)});
  }
  return out;
}

LinearFit fit_linear_trajectory(std::span<const ViewportSample> history) {
  if (history.size() < 2) throw InvalidArgument("linear regression needs at least 2 samples");
  // Unwrap yaw so consecutive differences stay within half a turn.
  std::vector<double> yaw(history.size());
  yaw[0] = history[0].yaw;
  for (std::size_t i = 1; i < history.size(); ++i) {
    double d = history[i].yaw - history[i - 1].yaw;
    d = wrap_yaw(d);
    yaw[i] = yaw[i - 1] + d;
  }
  const double n = static_cast<double>(history.size());
  double mt = 0, my = 0, mp = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    mt += history[i].t;
    my += yaw[i];
    mp += history[i].pitch;
  }
  mt /= n;
  my /= n;
  mp /= n;
  double stt = 0, sty = 0, stp = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double dt = history[i].t - mt;
    stt += dt * dt;
    sty += dt * (yaw[i] - my);
    stp += dt * (history[i].pitch - mp);
  }
  if (!(stt > 0.0)) throw InvalidArgument("linear regression needs distinct sample times");
  LinearFit fit;
  fit.yaw_slope = sty / stt;
  fit.yaw_intercept = my - fit.yaw_slope * mt;
  fit.pitch_slope = stp / stt;
  fit.pitch_intercept = mp - fit.pitch_slope * mt;
  return fit;
}

ViewportSample lr_extrapolate(std::span<const ViewportSample> history, double horizon) {
  const LinearFit fit = fit_linear_trajectory(history);
  const double t = history.back().t + horizon;
  return {t, wrap_yaw(fit.yaw_slope * t + fit.yaw_intercept),
          std::clamp(fit.pitch_slope * t + fit.pitch_intercept, -90.0, 90.0)};
}

ProbabilityMatrix lr_predict(std::span<const ViewportSample> history, double horizon,
                             const TileGrid& grid, const FovSpec& fov) {
  return ProbabilityMatrix::from_tiles(viewport_to_tiles(lr_extrapolate(history, horizon), grid, fov));
}

}  // namespace tilestream
