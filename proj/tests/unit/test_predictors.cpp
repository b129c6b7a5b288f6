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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "../support/gradcheck.hpp"
#include "tilestream/error.hpp"
#include "tilestream/predictors.hpp"
#include "tilestream/synthetic.hpp"

using namespace tilestream;
using tilestream::testing::grad_check;
using tilestream::testing::random_tensor;

namespace {

ConvLstmConfig tiny_config(std::size_t cells = 1) {
  ConvLstmConfig c;
  c.grid = TileGrid(2, 4);
  c.map_height = 4;
  c.map_width = 8;
  c.cells = cells;
  c.hidden = 2;
  c.se_reduction = 2;
  c.window = 2;
  return c;
}

ParameterSet zeroed(ParameterSet p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    for (double& v : p.values(i)) v = 0.0;
  return p;
}

void fill(ParameterSet& p, const std::string& name, double v) {
  for (double& x : p.values(p.index_of(name))) x = v;
}

HistoryStep random_step(const ConvLstmConfig& c, Rng& rng) {
  TileMatrix tiles(c.grid);
  for (std::size_t r = 0; r < c.grid.rows; ++r)
    for (std::size_t k = 0; k < c.grid.cols; ++k) tiles.set(r, k, rng.uniform() < 0.4);
  std::vector<double> s(c.map_height * c.map_width);
  for (double& v : s) v = rng.uniform(0.01, 1.0);
  SaliencyMap map(c.map_height, c.map_width, std::move(s));
  map.normalize();
  return {tiles, map};
}

ConvLstmState random_state(const ConvLstmConfig& c, Rng& rng) {
  return {random_tensor({c.hidden, c.map_height, c.map_width}, rng, -0.9, 0.9),
          random_tensor({c.hidden, c.map_height, c.map_width}, rng, -2.0, 2.0)};
}

double inf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

std::vector<ViewportSample> line(double t0, double dt, std::size_t n, double yaw0, double yaw_rate,
                                 double pitch0 = 0.0, double pitch_rate = 0.0) {
  std::vector<ViewportSample> out;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = t0 + dt * static_cast<double>(k);
    out.push_back({t, wrap_yaw(yaw0 + yaw_rate * (t - t0)), pitch0 + pitch_rate * (t - t0)});
  }
  return out;
}

}  // namespace

TEST_CASE("probability matrix validates range and size") {
  TileGrid g(2, 4);
  CHECK_THROWS_AS(ProbabilityMatrix(g, std::vector<double>(8, 1.5)), InvalidArgument);
  CHECK_THROWS_AS(ProbabilityMatrix(g, std::vector<double>(7, 0.5)), InvalidArgument);
  TileMatrix t(g);
  t.set(1, 2, true);
  const auto p = ProbabilityMatrix::from_tiles(t);
  CHECK(p(1, 2) == 1.0);
  CHECK(p(0, 0) == 0.0);
}

TEST_CASE("convlstm config validation") {
  ConvLstmConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.map_width = 10;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_config();
  c.kernel = 2;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_config();
  c.cells = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = tiny_config();
  c.se_reduction = 3;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);

  Rng rng(3);
  ParameterSet p = ConvLstm::init_params(tiny_config(), rng);
  ParameterSet wrong;
  wrong.add("head.w", Tensor({1, 2}));
  CHECK_THROWS_AS(ConvLstm(tiny_config(), wrong), InvalidArgument);
  CHECK_THROWS_AS(ConvLstm(tiny_config(2), p), InvalidArgument);
}

TEST_CASE("saturated forget gate keeps the cell memory") {
  const ConvLstmConfig cfg = tiny_config();
  Rng rng(11);
  ParameterSet p = ConvLstm::init_params(cfg, rng);
  fill(p, "cell0.se1", 0.0);
  fill(p, "cell0.se2", 0.0);  // SE scale is exactly 0.5
  auto bias = p.values(p.index_of("cell0.bias"));
  const std::size_t h = cfg.hidden;
  for (std::size_t k = 0; k < h; ++k) {
    bias[k] = -80.0;     // i -> 0
    bias[h + k] = 80.0;  // f -> 1
  }
  const ConvLstm model(cfg, p);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor({2, cfg.map_height, cfg.map_width}, rng);
    const ConvLstmState prev = random_state(cfg, rng);
    const ConvLstmState next = model.cell_step(0, x, prev);
    CHECK(max_abs_diff(next.c, prev.c) < 1e-6);
  }
}

TEST_CASE("zero-weight cell has the closed form") {
  const ConvLstmConfig cfg = tiny_config();
  Rng rng(5);
  const ConvLstm model(cfg, zeroed(ConvLstm::init_params(cfg, rng)));
  const Tensor x = random_tensor({2, cfg.map_height, cfg.map_width}, rng);
  const ConvLstmState prev = random_state(cfg, rng);
  const ConvLstmState next = model.cell_step(0, x, prev);
  for (std::size_t i = 0; i < prev.c.size(); ++i) {
    const double c_expected = 0.5 * prev.c[i];  // f*c + i*g with f = 0.5, g = 0
    CHECK(next.c[i] == doctest::Approx(c_expected).epsilon(1e-15));
    CHECK(next.h[i] == doctest::Approx(0.5 * std::tanh(c_expected)).epsilon(1e-15));
  }
}

TEST_CASE("cell preserves shape, gate ranges and contracts memory with a closed input gate") {
  Rng rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    ConvLstmConfig cfg = tiny_config(1 + trial % 2);
    cfg.hidden = 2 + 2 * static_cast<std::size_t>(trial % 2);
    ParameterSet p = ConvLstm::init_params(cfg, rng);
    const ConvLstm model(cfg, p);
    const Tensor x = random_tensor({2, cfg.map_height, cfg.map_width}, rng);
    const ConvLstmState prev = random_state(cfg, rng);
    const ConvLstmState next = model.cell_step(0, x, prev);
    CHECK(next.h.shape() == prev.h.shape());
    CHECK(next.c.shape() == prev.c.shape());
    for (std::size_t i = 0; i < next.h.size(); ++i) {
      // |h| = o * |tanh(c)| < 1 and |c_next| <= |c_prev| + 1.
      CHECK(std::abs(next.h[i]) < 1.0);
      CHECK(std::abs(next.c[i]) < std::abs(prev.c[i]) + 1.0);
    }

    fill(p, "cell0.se1", 0.0);
    fill(p, "cell0.se2", 0.0);
    auto bias = p.values(p.index_of("cell0.bias"));
    for (std::size_t k = 0; k < cfg.hidden; ++k) bias[k] = -200.0;  // i == 0 in double precision
    const ConvLstm closed(cfg, p);
    CHECK(inf_norm(closed.cell_step(0, x, prev).c) <= inf_norm(prev.c));
  }
}

TEST_CASE("forward outputs probabilities; zero network gives one half") {
  const ConvLstmConfig cfg = tiny_config(2);
  Rng rng(8);
  HistoryWindow window{random_step(cfg, rng), random_step(cfg, rng), random_step(cfg, rng)};
  for (int trial = 0; trial < 5; ++trial) {
    const ConvLstm model = ConvLstm::initialize(cfg, 100 + trial);
    const ProbabilityMatrix p = model.predict(window);
    for (double v : p.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  const ConvLstm zero(cfg, zeroed(ConvLstm::init_params(cfg, rng)));
  const ProbabilityMatrix half = zero.predict(window);
  for (double v : half.values()) CHECK(v == 0.5);
  CHECK_THROWS_AS(zero.predict({}), InvalidArgument);

  HistoryWindow bad = window;
  bad[1].saliency = SaliencyMap(8, 16, 1.0);
  CHECK_THROWS_AS(zero.predict(bad), InvalidArgument);
}

TEST_CASE("single-step window equals one cell step per layer plus head") {
  const ConvLstmConfig cfg = tiny_config(2);
  Rng rng(31);
  const ConvLstm model = ConvLstm::initialize(cfg, 9);
  const HistoryStep step = random_step(cfg, rng);

  const Tensor zeros({cfg.hidden, cfg.map_height, cfg.map_width});
  Tensor input = model.encode_step(step);
  for (std::size_t cell = 0; cell < cfg.cells; ++cell) input = model.cell_step(cell, input, {zeros, zeros}).h;
  ad::Tape tape;
  BoundParameters bound(tape, model.params(), false);
  const Tensor manual = model.head(bound, tape.constant(input)).value();

  const ProbabilityMatrix p = model.predict({step});
  for (std::size_t i = 0; i < manual.size(); ++i) CHECK(p.values()[i] == manual[i]);
}

TEST_CASE("encode_step: unit-peak saliency and nearest-upsampled tiles") {
  const ConvLstmConfig cfg = tiny_config();
  TileMatrix tiles(cfg.grid);
  tiles.set(1, 3, true);
  SaliencyMap map(4, 8, 1.0);
  map(0, 0) = 4.0;
  map.normalize();
  const ConvLstm model = ConvLstm::initialize(cfg, 1);
  const Tensor x = model.encode_step({tiles, map});
  CHECK(x.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(x.at(0, 3, 7) == doctest::Approx(0.25));
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t c = 0; c < 8; ++c) CHECK(x.at(1, y, c) == ((y >= 2 && c >= 6) ? 1.0 : 0.0));
}

TEST_CASE("end-to-end gradient check on a tiny convlstm") {
  Rng rng(1234);
  for (std::size_t cells = 1; cells <= 2; ++cells) {
    const ConvLstmConfig cfg = tiny_config(cells);
    for (int trial = 0; trial < 3; ++trial) {
      const ConvLstm model = ConvLstm::initialize(cfg, 50 + static_cast<std::uint64_t>(trial));
      HistoryWindow window{random_step(cfg, rng), random_step(cfg, rng)};
      Tensor truth({1, cfg.grid.rows, cfg.grid.cols});
      for (double& v : truth.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      const auto r = grad_check(model.params(), [&](ad::Tape& t, const BoundParameters& b) {
        return ad::bce_loss(model.forward(t, b, window), truth);
      });
      INFO("worst " << r.worst);
      CHECK(r.max_rel_error < testing::kFdRelTol);
    }
  }
}

TEST_CASE("training overfits a single example and is deterministic") {
  const ConvLstmConfig cfg = tiny_config();
  Rng rng(4);
  TrainingExample ex{{random_step(cfg, rng), random_step(cfg, rng)}, TileMatrix(cfg.grid)};
  ex.truth.set(0, 1, true);
  ex.truth.set(1, 1, true);
  const ConvLstm model = ConvLstm::initialize(cfg, 2);
  TrainOptions opt;
  opt.epochs = 200;
  opt.optimizer.learning_rate = 1e-2;
  const std::vector<TrainingExample> data{ex};
  const TrainReport a = train_convlstm(model, data, opt);
  const TrainReport b = train_convlstm(model, data, opt);
  CHECK(a.epoch_loss.size() == 200);
  CHECK(a.epoch_loss.back() < a.initial_loss);
  CHECK(mean_bce(ConvLstm(cfg, a.params), data) < 0.5 * a.initial_loss);
  CHECK(a.params == b.params);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK_THROWS_AS(train_convlstm(model, {}, opt), InvalidArgument);
}

TEST_CASE("training on planted-saliency sessions improves held-out F1") {
  PlantedSessionConfig pc;
  pc.map_height = 10;
  pc.map_width = 20;
  pc.duration_s = 60;
  const PlantedSession train = generate_planted_session(pc, 41);
  const PlantedSession test = generate_planted_session(pc, 42);
  const TileGrid grid;
  const FovSpec fov;
  const WindowSource a{train.head, train.chunk_saliency, 1.0};
  const WindowSource b{test.head, test.chunk_saliency, 1.0};
  const auto train_set = make_chunk_examples(a, 1, train.chunk_count() - 1, 3.0, 3, grid, fov);
  const auto test_set = make_chunk_examples(b, 1, test.chunk_count() - 1, 3.0, 3, grid, fov);

  ConvLstmConfig cfg;
  cfg.map_height = 10;
  cfg.map_width = 20;
  cfg.cells = 1;
  cfg.hidden = 4;
  cfg.window = 3;
  const ConvLstm model = ConvLstm::initialize(cfg, 6);
  TrainOptions opt;
  opt.epochs = 8;
  opt.optimizer.learning_rate = 1e-2;
  const ConvLstm trained(cfg, train_convlstm(model, train_set, opt).params);

  auto mean_f1 = [&](const ConvLstm& m) {
    double f = 0.0;
    for (const auto& ex : test_set) f += prediction_metrics(m.predict(ex.window).values(), ex.truth).f1;
    return f / static_cast<double>(test_set.size());
  };
  const double before = mean_f1(model), after = mean_f1(trained);
  INFO("before " << before << " after " << after);
  CHECK(after > before);
  CHECK(after > 0.7);
}

TEST_CASE("head_at and sample_history") {
  const std::vector<ViewportSample> trace{{0.0, 0, 0}, {0.5, 10, 1}, {1.0, 20, 2}};
  CHECK(head_at(trace, 0.7).yaw == 10);
  CHECK(head_at(trace, 1.0).yaw == 20);
  CHECK(head_at(trace, -1.0).yaw == 0);  // earliest sample repeats
  const auto h = sample_history(trace, 1.0, 2.0, 4);
  REQUIRE(h.size() == 4);
  CHECK(h[0].t == 0.0);  // left-padded by clamping
  CHECK(h[1].t == 0.0);
  CHECK(h[2].yaw == 10);
  CHECK(h[3].yaw == 20);
  CHECK_THROWS_AS(sample_history(trace, 1.0, 0.0, 2), InvalidArgument);
}

TEST_CASE("history windows pair each step with the targeted chunk map") {
  const TileGrid grid;
  const FovSpec fov;
  const auto head = line(0.0, 0.1, 40, 0.0, 0.0);
  std::vector<SaliencyMap> maps;
  for (int c = 0; c < 4; ++c) maps.emplace_back(1, 2, std::vector<double>{double(c) + 1.0, 1.0});
  const WindowSource src{head, maps, 1.0};
  const HistoryWindow w = build_history_window(src, 2.0, 2.0, 3, 1.0, grid, fov);
  REQUIRE(w.size() == 3);
  CHECK(w[0].saliency(0, 0) == maps[1](0, 0));  // t = 1.0 -> target 2.0 ends chunk 1
  CHECK(w[1].saliency(0, 0) == maps[2](0, 0));  // t = 1.5 -> target 2.5 in chunk 2
  CHECK(w[2].saliency(0, 0) == maps[2](0, 0));  // t = 2.0 -> target 3.0 ends chunk 2

  const auto ex = make_chunk_examples(src, 1, 2, 2.0, 3, grid, fov);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].truth == viewport_to_tiles(head[0], grid, fov));
}

TEST_CASE("linear regression extrapolation") {
  const TileGrid grid;
  const FovSpec fov;
  SUBCASE("constant trajectory") {
    const auto h = line(0.0, 0.2, 6, 37.0, 0.0, -12.0);
    const ViewportSample p = lr_extrapolate(h, 1.0);
    CHECK(p.yaw == doctest::Approx(37.0));
    CHECK(p.pitch == doctest::Approx(-12.0));
    CHECK(lr_predict(h, 1.0, grid, fov).values().size() == 200);
    const TileMatrix expected = viewport_to_tiles(h.back(), grid, fov);
    CHECK(lr_predict(h, 1.0, grid, fov) == ProbabilityMatrix::from_tiles(expected));
  }
  SUBCASE("yaw = 10 t, horizon 1 from t = 5") {
    std::vector<ViewportSample> h;
    for (int k = 0; k <= 5; ++k) h.push_back({double(k), 10.0 * k, 0.0});
    CHECK(lr_extrapolate(h, 1.0).yaw == doctest::Approx(60.0).epsilon(1e-12));
  }
  SUBCASE("seam crossing continues smoothly") {
    const std::vector<ViewportSample> h{{0, 170, 0}, {1, 175, 0}, {2, -180, 0}, {3, -175, 0}};
    CHECK(lr_extrapolate(h, 1.0).yaw == doctest::Approx(-170.0));
    CHECK(lr_extrapolate(h, 3.0).yaw == doctest::Approx(-160.0));
  }
  SUBCASE("pitch is clamped") {
    const auto h = line(0.0, 1.0, 4, 0.0, 0.0, 60.0, 20.0);
    CHECK(lr_extrapolate(h, 2.0).pitch == 90.0);
  }
  SUBCASE("needs two samples") {
    const std::vector<ViewportSample> one{{0, 0, 0}};
    CHECK_THROWS_AS(lr_predict(one, 1.0, grid, fov), InvalidArgument);
  }
}

TEST_CASE("linear regression is equivariant to yaw rotation") {
  const TileGrid grid;
  const FovSpec fov;
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ViewportSample> h;
    double yaw = rng.uniform(-180.0, 180.0), pitch = rng.uniform(-40.0, 40.0);
    for (int k = 0; k < 5; ++k) {
      h.push_back({0.2 * k, wrap_yaw(yaw), pitch});
      yaw += rng.uniform(-15.0, 15.0);
      pitch += rng.uniform(-3.0, 3.0);
    }
    const double delta = 18.0 * static_cast<double>(rng.index(20));
    auto rotated = h;
    for (auto& s : rotated) s.yaw = wrap_yaw(s.yaw + delta);
    const ViewportSample a = lr_extrapolate(h, 1.0), b = lr_extrapolate(rotated, 1.0);
    CHECK(std::abs(wrap_yaw(b.yaw - a.yaw - delta)) < 1e-9);
    const auto pa = lr_predict(h, 1.0, grid, fov), pb = lr_predict(rotated, 1.0, grid, fov);
    const auto shift = static_cast<std::size_t>(std::lround(delta / 18.0));
    std::size_t mismatches = 0;
    for (std::size_t r = 0; r < grid.rows; ++r)
      for (std::size_t c = 0; c < grid.cols; ++c) mismatches += pa(r, c) != pb(r, (c + shift) % grid.cols);
    CHECK(mismatches == 0);
  }
}
