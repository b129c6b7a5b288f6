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
#include "../support/geometry_oracles.hpp"
#include "tilestream/error.hpp"
#include "tilestream/geometry.hpp"
#include "tilestream/random.hpp"

using namespace tilestream;

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(TileGrid(0, 20), InvalidArgument);
  CHECK_THROWS_AS(TileGrid(10, 7), InvalidArgument);
  CHECK_NOTHROW(TileGrid(1, 2));
}

TEST_CASE("full-sphere fov marks every tile") {
  const TileGrid g(10, 20);
  CHECK(viewport_to_tiles({0, 37, -12}, g, {360, 180}).count() == 200);
}

TEST_CASE("centred viewport is symmetric about the centre lines") {
  const TileGrid g(10, 20);
  const TileMatrix m = viewport_to_tiles({0, 0, 0}, g, {90, 90});
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) {
      CHECK(m(r, c) == m(g.rows - 1 - r, c));
      CHECK(m(r, c) == m(r, g.cols - 1 - c));
    }
  // [-45,45] yaw covers columns 7..12; [-45,45] pitch covers rows 2..7.
  CHECK(m.count() == 36);
  CHECK(m(2, 7) == 1);
  CHECK(m(1, 7) == 0);
}

TEST_CASE("viewport near the seam wraps across column 19/0") {
  const TileGrid g(10, 20);
  const ViewportSample s{0, 179, 0};
  const TileMatrix m = viewport_to_tiles(s, g, {90, 90});
  CHECK(m == testing::rasterized_viewport(s, g, {90, 90}));
  CHECK(m(5, 0) == 1);
  CHECK(m(5, 19) == 1);
  CHECK(m(5, 2) == 1);   // 179+45 = 224 -> -136, inside column 2 [-144,-126]
  CHECK(m(5, 3) == 0);
  CHECK(m(5, 17) == 1);  // 134 falls in column 17 [126,144]
  CHECK(m(5, 16) == 0);
}

TEST_CASE("viewport_to_tiles agrees with the rasterisation oracle") {
  Rng rng(11);
  const TileGrid g(10, 20);
  for (int i = 0; i < 60; ++i) {
    const ViewportSample s{0, std::floor(rng.uniform(-180, 180)), std::floor(rng.uniform(-90, 91))};
    const FovSpec fov{std::floor(rng.uniform(1, 361)), std::floor(rng.uniform(1, 181))};
    INFO("yaw " << s.yaw << " pitch " << s.pitch << " fov " << fov.h_deg << "x" << fov.v_deg);
    CHECK(viewport_to_tiles(s, g, fov) == testing::rasterized_viewport(s, g, fov));
  }
}

TEST_CASE("wrap distance examples and metric axioms") {
  const TileGrid g(10, 20);
  CHECK(wrap_manhattan_distance({3, 4}, {3, 4}, g) == 0);
  CHECK(wrap_manhattan_distance({0, 0}, {0, 19}, g) == 1);
  CHECK(wrap_manhattan_distance({0, 0}, {9, 10}, g) == 19);
  CHECK_THROWS_AS(wrap_manhattan_distance({10, 0}, {0, 0}, g), InvalidArgument);
  Rng rng(12);
  auto tile = [&] { return Tile{rng.index(g.rows), rng.index(g.cols)}; };
  for (int i = 0; i < 500; ++i) {
    Tile a = tile(), b = tile(), c = tile();
    const auto ab = wrap_manhattan_distance(a, b, g);
    CHECK(ab == wrap_manhattan_distance(b, a, g));
    CHECK((ab == 0) == (a == b));
    CHECK(wrap_manhattan_distance(a, c, g) <= ab + wrap_manhattan_distance(b, c, g));
  }
}

TEST_CASE("min distance to set") {
  const TileGrid g(6, 8);
  std::vector<Tile> set{{2, 3}};
  CHECK(min_distance_to_set({2, 3}, set, g) == 0);
  CHECK(min_distance_to_set({0, 7}, set, g) == wrap_manhattan_distance({0, 7}, {2, 3}, g));
  CHECK_THROWS_AS(min_distance_to_set({0, 0}, std::vector<Tile>{}, g), InvalidArgument);
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    std::vector<Tile> s;
    for (std::size_t k = 0, n = 1 + rng.index(6); k < n; ++k) s.push_back({rng.index(6), rng.index(8)});
    const Tile t{rng.index(6), rng.index(8)};
    CHECK(min_distance_to_set(t, s, g) == testing::brute_min_distance(t, s, g));
  }
}

TEST_CASE("downsampled shapes") {
  const TileGrid g(10, 20);
  CHECK(downsampled_shape(g, 1) == std::pair<std::size_t, std::size_t>{10, 20});
  CHECK(downsampled_shape(g, 144) == std::pair<std::size_t, std::size_t>{120, 240});
  CHECK(downsampled_shape(g, 4) == std::pair<std::size_t, std::size_t>{20, 40});
  CHECK_THROWS_AS(downsampled_shape(g, 2), InvalidArgument);
  CHECK_THROWS_AS(downsampled_shape(g, 0), InvalidArgument);
}

TEST_CASE("downsample_saliency preserves constancy and unit mass") {
  const TileGrid g(10, 20);
  SaliencyMap flat(180, 360, 3.0);
  SaliencyMap out = downsample_saliency(flat, g, 144);
  CHECK(out.height() == 120);
  CHECK(out.width() == 240);
  CHECK(out.size() == 28800);
  for (double v : out.values()) CHECK(v == doctest::Approx(1.0 / 28800).epsilon(1e-12));
  Rng rng(14);
  SaliencyMap noisy(90, 180);
  for (double& v : noisy.values()) v = rng.uniform();
  SaliencyMap d = downsample_saliency(noisy, g, 4);
  CHECK(std::abs(d.total() - 1.0) < 1e-9);
  CHECK_THROWS_AS(downsample_saliency(SaliencyMap(10, 20, 1.0), g, 4), InvalidArgument);
}

TEST_CASE("ground truth is the union of viewports") {
  const TileGrid g(10, 20);
  const FovSpec fov{90, 90};
  ViewportSample a{0.0, 0, 0}, b{0.5, -150, 30};
  const ViewportSample one[] = {a};
  CHECK(ground_truth_tiles(one, g, fov) == viewport_to_tiles(a, g, fov));
  const ViewportSample both[] = {a, b};
  const ViewportSample swapped[] = {b, a};
  TileMatrix u = ground_truth_tiles(both, g, fov);
  CHECK(u == ground_truth_tiles(swapped, g, fov));
  for (const Tile& t : viewport_to_tiles(a, g, fov).ones()) CHECK(u(t.row, t.col) == 1);
  for (const Tile& t : viewport_to_tiles(b, g, fov).ones()) CHECK(u(t.row, t.col) == 1);
  CHECK_THROWS_AS(ground_truth_tiles(std::span<const ViewportSample>{}, g, fov), InvalidArgument);
}

TEST_CASE("prediction metrics") {
  const TileGrid g(2, 2);
  TileMatrix truth(g);
  truth.set(0, 0, true);
  truth.set(0, 1, true);
  auto m = prediction_metrics(std::vector<double>{0.9, 0.1, 0.2, 0.0}, truth);
  CHECK(m.accuracy == doctest::Approx(0.75));
  CHECK(m.precision == doctest::Approx(1.0));
  CHECK(m.recall == doctest::Approx(0.5));
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
  m = prediction_metrics(std::vector<double>{1, 1, 0, 0}, truth);
  CHECK(m.accuracy == 1.0);
  CHECK(m.f1 == 1.0);
  m = prediction_metrics(std::vector<double>{0, 0, 0, 0}, truth);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK_THROWS_AS(prediction_metrics(std::vector<double>{0, 0}, truth), InvalidArgument);
}

TEST_CASE("head trace and saliency file formats") {
  auto s = parse_head_trace("t,yaw,pitch\n0,10,5\n0.5,180,-3\n", "mem");
  REQUIRE(s.size() == 2);
  CHECK(s[1].yaw == -180.0);
  CHECK(parse_head_trace(format_head_trace(s), "again").size() == 2);
  CHECK_THROWS_AS(parse_head_trace("t,yaw\n0,1\n", "mem"), DataError);
  CHECK_THROWS_AS(parse_head_trace("t,yaw,pitch\n1,0,0\n0.5,0,0\n", "mem"), DataError);
  CHECK_THROWS_AS(parse_head_trace("t,yaw,pitch\n1,0,95\n", "mem"), DataError);

  SaliencyMap m = parse_saliency_csv("1,2,3,4\n0,0,1,0\n", "mem");
  CHECK(m.height() == 2);
  CHECK(m.width() == 4);
  const auto bytes = encode_saliency(m);
  CHECK(decode_saliency(bytes) == m);
  CHECK(bytes.size() == 8 + 4 + 4 + 8 * 8);
  CHECK_THROWS_AS(parse_saliency_csv("1,2\n3\n", "mem"), DataError);
  CHECK_THROWS_AS(SaliencyMap(2, 2, 0.0).normalize(), InvalidArgument);
}
