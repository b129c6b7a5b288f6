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
#include "../support/abr_oracles.hpp"
#include "tilestream/abr.hpp"
#include "tilestream/error.hpp"
#include "tilestream/random.hpp"

using namespace tilestream;
using tilestream::testing::brute_force_cba;
using tilestream::testing::BruteInstance;

namespace {

ProbabilityMatrix random_probs(const TileGrid& g, Rng& rng, double spike = 0.15) {
  std::vector<double> p(g.tile_count());
  for (double& v : p) v = rng.uniform() < spike ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.5);
  return ProbabilityMatrix(g, std::move(p));
}

// Ranks from the definition, scanning every viewport tile explicitly.
std::vector<int> brute_ranks(const ProbabilityMatrix& p, double p_vp, int k) {
  const TileGrid& g = p.grid();
  const auto v = p.values();
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] >= p_vp) members.push_back(i);
  if (members.empty()) members.push_back(static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin()));
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    long best = 1L << 30;
    for (std::size_t j : members) {
      const long dr = std::labs(long(i / g.cols) - long(j / g.cols));
      const long dc = std::labs(long(i % g.cols) - long(j % g.cols));
      best = std::min(best, dr + std::min(dc, long(g.cols) - dc));
    }
    out.push_back(static_cast<int>(std::max(long(k) - best, 1L)));
  }
  return out;
}

ClassMap ranks(const TileGrid& g, int k, std::vector<int> r) { return ClassMap{g, k, std::move(r)}; }

BruteInstance to_brute(const ClassMap& c, const BitrateLadder& ladder, const AbrInputs& in) {
  return {c.grid.rows, c.grid.cols, c.k, c.rank,
          std::vector<double>(ladder.rates().begin(), ladder.rates().end()),
          in.budget_mbps, in.saliency_mbps, in.lambda, in.q1_prev, in.conf};
}

bool monotone(const ChunkDecision& d) {
  return std::is_sorted(d.class_level.begin(), d.class_level.end());
}

}  // namespace

TEST_CASE("bitrate ladder") {
  const BitrateLadder l;
  CHECK(l.levels() == 6);
  CHECK(l.low() == 1.0);
  CHECK(l.high() == 40.0);
  CHECK(l.rate(3) == 5.0);
  CHECK_THROWS_AS(l.rate(0), InvalidArgument);
  CHECK_THROWS_AS(BitrateLadder({1.0}), InvalidArgument);
  CHECK_THROWS_AS(BitrateLadder({1.0, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(BitrateLadder({-1.0, 1.0}), InvalidArgument);
}

TEST_CASE("tile classification") {
  const TileGrid g;
  SUBCASE("every tile in the viewport") {
    const ClassMap c = classify_tiles(ProbabilityMatrix(g, 0.9), 0.5, 6);
    for (int r : c.rank) CHECK(r == 6);
  }
  SUBCASE("single viewport tile") {
    std::vector<double> p(g.tile_count(), 0.1);
    p[4 * 20 + 10] = 0.8;
    const ClassMap c = classify_tiles(ProbabilityMatrix(g, p), 0.5, 6);
    CHECK(c(4, 10) == 6);
    CHECK(c(3, 10) == 5);
    CHECK(c(5, 10) == 5);
    CHECK(c(4, 9) == 5);
    CHECK(c(4, 11) == 5);
    CHECK(c(4, 12) == 4);
    CHECK(c(9, 10) == 1);  // distance 5
    CHECK(c(4, 0) == 1);   // distance 10
  }
  SUBCASE("empty viewport falls back to the argmax tile") {
    std::vector<double> p(g.tile_count(), 0.1);
    p[7] = 0.3;
    const ClassMap c = classify_tiles(ProbabilityMatrix(g, p), 0.5, 4);
    CHECK(c(0, 7) == 4);
    CHECK(std::count(c.rank.begin(), c.rank.end(), 4) == 1);
  }
  SUBCASE("random fields match the brute-force ranks") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      const TileGrid tg(1 + rng.index(10), 2 * (1 + rng.index(10)));
      const auto p = random_probs(tg, rng);
      const int k = 1 + static_cast<int>(rng.index(6));
      const double p_vp = rng.uniform(0.3, 0.9);
      const ClassMap c = classify_tiles(p, p_vp, k);
      CHECK(c.rank == brute_ranks(p, p_vp, k));
      CHECK(std::count(c.rank.begin(), c.rank.end(), k) >= 1);
    }
  }
  CHECK_THROWS_AS(classify_tiles(ProbabilityMatrix(g, 0.5), 1.0, 6), InvalidArgument);
  CHECK_THROWS_AS(classify_tiles(ProbabilityMatrix(g, 0.5), 0.5, 0), InvalidArgument);
}

TEST_CASE("confidence model") {
  const ConfidenceModel m;
  CHECK(confidence(m, 4.0) == doctest::Approx(0.74).epsilon(1e-15));
  CHECK(confidence(m, m.sf0) == doctest::Approx((m.c0 + m.c1) / 2));
  CHECK(confidence(m, 40.0) < m.c1);
  CHECK(confidence(m, 40.0) > m.c1 - 1e-12);
  double prev = 0.0;
  for (double sf = 0.0; sf <= 30.0; sf += 0.5) {
    const double c = confidence(m, sf);
    CHECK(c > 0.0);
    CHECK(c < 1.0);
    CHECK(c >= prev);
    prev = c;
  }
  ConfidenceModel bad;
  bad.c1 = 0.4;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(confidence(m, -1.0), InvalidArgument);
}

TEST_CASE("quality terms") {
  const BitrateLadder l;
  const TileGrid g(2, 2);
  SUBCASE("all rank 1 at level 1") {
    const ClassMap c = ranks(g, 1, {1, 1, 1, 1});
    const ChunkDecision d = decision_from_classes(c, {1});
    CHECK(qoe_q1(d, c, l, 1.0) == 1.0);
    CHECK(qoe_q1(d, c, l, 0.5) == 0.5);
  }
  SUBCASE("hand example") {
    const BitrateLadder two({1.0, 2.5});
    const ClassMap c = ranks(g, 2, {2, 1, 1, 1});
    const ChunkDecision d = decision_from_classes(c, {1, 2});
    CHECK(qoe_q1(d, c, two, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("q2") {
    const ClassMap c = ranks(g, 3, {3, 2, 1, 1});
    const ChunkDecision uniform = decision_from_classes(c, {2, 2, 2});
    CHECK(qoe_q2(uniform, c, l, 1.5, 1.5) == 0.0);
    const ChunkDecision spread = decision_from_classes(c, {1, 1, 3});  // rank>1 at 1 and 5 Mbps
    CHECK(qoe_q2(spread, c, l, 2.0, 2.0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(qoe_q2(spread, c, l, 2.0, 3.5) == doctest::Approx(3.5).epsilon(1e-15));
    const ClassMap flat = ranks(g, 1, {1, 1, 1, 1});
    CHECK(qoe_q2(decision_from_classes(flat, {4}), flat, l, 1.0, 3.0) == 2.0);
  }
  SUBCASE("inconsistent decision") {
    const ClassMap c = ranks(g, 2, {2, 1, 1, 1});
    ChunkDecision d = decision_from_classes(c, {1, 2});
    d.level[0] = 1;
    CHECK_THROWS_AS(qoe_q1(d, c, l, 1.0), InvalidArgument);
  }
}

TEST_CASE("candidate enumeration") {
  CHECK(candidate_count(6, 6) == 462);
  CHECK(candidate_count(3, 3) == 10);
  for (int k = 1; k <= 6; ++k)
    for (int l = 1; l <= 6; ++l) {
      const auto all = enumerate_class_assignments(k, l);
      CHECK(all.size() == candidate_count(k, l));
      CHECK(std::is_sorted(all.begin(), all.end()));
      CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
      for (const auto& a : all) {
        CHECK(std::is_sorted(a.begin(), a.end()));
        CHECK(a.front() >= 1);
        CHECK(a.back() <= l);
      }
    }
}

TEST_CASE("cba boundary cases") {
  const BitrateLadder l;
  const TileGrid g;
  Rng rng(2);
  const ClassMap c = classify_tiles(random_probs(g, rng), 0.5, 6);
  const double sm = saliency_cost_mbps(20 * 40, 1.0);

  AbrInputs in;
  in.lambda = 0.0;
  in.saliency_mbps = sm;
  in.budget_mbps = 200 * 40.0 + sm;
  ChunkDecision d = cba_solve(c, l, in);
  for (int lv : d.level) CHECK(lv == 6);
  CHECK_FALSE(d.over_budget);

  in.lambda = 2.0;
  in.budget_mbps = 200 * 1.0 + sm;
  d = cba_solve(c, l, in);
  for (int lv : d.level) CHECK(lv == 1);
  CHECK_FALSE(d.over_budget);

  in.budget_mbps = 150.0;
  d = cba_solve(c, l, in);
  for (int lv : d.level) CHECK(lv == 1);
  CHECK(d.over_budget);
}

TEST_CASE("cba matches the brute-force optimum") {
  Rng rng(99);
  std::size_t checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const TileGrid g(1 + rng.index(3), 2 * (1 + rng.index(3)));
    const int k = 1 + static_cast<int>(rng.index(3));
    std::vector<double> rates;
    double r = rng.uniform(0.5, 2.0);
    const int levels = k;
    for (int i = 0; i < levels + (k == 1 ? 1 : 0); ++i) {
      rates.push_back(r);
      r += rng.uniform(0.5, 5.0);
    }
    const BitrateLadder ladder(rates);
    const ClassMap c = classify_tiles(random_probs(g, rng, 0.3), 0.5, k);
    AbrInputs in;
    in.saliency_mbps = rng.uniform(0.0, 2.0);
    in.budget_mbps = in.saliency_mbps + g.tile_count() * rng.uniform(0.8 * ladder.low(), 1.1 * ladder.high());
    in.lambda = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 3.0);
    in.q1_prev = rng.uniform(0.0, 10.0);
    in.conf = rng.uniform(0.5, 1.0);

    const ChunkDecision d = cba_solve(c, ladder, in);
    const auto oracle = brute_force_cba(to_brute(c, ladder, in));
    if (!oracle) {
      CHECK(d.over_budget);
      continue;
    }
    ++checked;
    CHECK_FALSE(d.over_budget);
    CHECK(d.class_level == oracle->class_level);
    CHECK(monotone(d));
    CHECK(fits_budget(d.total_mbps(ladder), in));
  }
  CHECK(checked > 200);
}

TEST_CASE("cba choice is invariant to confidence scaling when lambda is zero") {
  Rng rng(5);
  const BitrateLadder l;
  for (int trial = 0; trial < 30; ++trial) {
    const TileGrid g(3, 6);
    const ClassMap c = classify_tiles(random_probs(g, rng), 0.5, 6);
    AbrInputs in;
    in.lambda = 0.0;
    in.budget_mbps = rng.uniform(18.0, 18 * 40.0);
    in.conf = 1.0;
    const ChunkDecision a = cba_solve(c, l, in);
    in.conf = 0.37;
    CHECK(cba_solve(c, l, in).class_level == a.class_level);
  }
}

TEST_CASE("cba explain lists every candidate") {
  const TileGrid g(2, 4);
  const ClassMap c = ranks(g, 3, {3, 2, 1, 1, 2, 1, 1, 1});
  AbrInputs in;
  in.budget_mbps = 30.0;
  const auto rows = cba_explain(c, BitrateLadder({1, 2, 4}), in);
  CHECK(rows.size() == 10);
  for (const auto& r : rows) CHECK(r.objective == doctest::Approx(r.q1 - 2.0 * r.q2));
}

TEST_CASE("pyramid baseline") {
  const BitrateLadder l;
  const TileGrid g(2, 4);
  const ClassMap c = ranks(g, 6, {6, 5, 4, 3, 2, 1, 1, 1});
  AbrInputs in;
  in.budget_mbps = 1e6;
  ChunkDecision d = pba_solve(c, l, in);
  CHECK(d.class_level == std::vector<int>{1, 2, 3, 4, 5, 6});

  // Two decrements: levels 1,1,1,2,3,4 -> 1+1+1+2.5+5+8 + 1+1 = 20.5 Mbps.
  in.budget_mbps = 20.5;
  d = pba_solve(c, l, in);
  CHECK(d.class_level == std::vector<int>{1, 1, 1, 2, 3, 4});
  CHECK_FALSE(d.over_budget);

  in.budget_mbps = 7.0;
  d = pba_solve(c, l, in);
  CHECK(d.over_budget);
  for (int lv : d.level) CHECK(lv == 1);

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const TileGrid tg(1 + rng.index(10), 2 * (1 + rng.index(10)));
    const ClassMap rc = classify_tiles(random_probs(tg, rng), 0.5, 1 + static_cast<int>(rng.index(6)));
    AbrInputs ri;
    ri.budget_mbps = rng.uniform(0.5, 40.0) * tg.tile_count();
    const ChunkDecision pd = pba_solve(rc, l, ri);
    CHECK((pd.over_budget || fits_budget(pd.total_mbps(l), ri)));
    CHECK(monotone(pd));
  }
}

TEST_CASE("saliency cost") {
  CHECK(saliency_cost_mbps(120 * 240, 1.0) == doctest::Approx(1.8432));
  CHECK(saliency_cost_mbps(200, 2.0) == doctest::Approx(200 * 64 / 2.0 / 1e6));
}

TEST_CASE("overhead planner") {
  std::vector<double> grid;
  for (int i = 1; i <= 16; ++i) grid.push_back(i);
  TimeModel fast;
  fast.a = 0.05;
  fast.b = 0.1;
  const OverheadPlan p = plan_overheads(fast, 1.0, grid);
  CHECK(p.sf == 16.0);
  CHECK(p.ratio == 144.0);
  CHECK(p.predict_time_s == doctest::Approx(0.9));

  TimeModel slow;
  slow.a = 0.2;
  slow.b = 0.9;
  CHECK_THROWS_AS(plan_overheads(slow, 1.0, grid), InfeasibleError);

  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    TimeModel m;
    m.a = rng.uniform(0.0, 0.2);
    m.c_r = rng.uniform(0.0, 1.0);
    m.d = rng.uniform(0.0, 0.01);
    m.b = rng.uniform(0.0, 0.5);
    try {
      const OverheadPlan q = plan_overheads(m, 1.0, grid);
      CHECK(m(q.sf, 144.0) < 1.0);
      for (double sf : grid)
        if (sf > q.sf) CHECK(m(sf, 144.0) >= 1.0);
    } catch (const InfeasibleError&) {
      CHECK(m(1.0, 144.0) >= 1.0);
    }
  }
  const std::vector<double> unsorted{2.0, 1.0};
  CHECK_THROWS_AS(plan_overheads(fast, 1.0, unsorted), InvalidArgument);
}

TEST_CASE("f1 ratio model") {
  const std::vector<double> ratios{1, 4, 9, 16, 36, 64, 144, 256};
  std::vector<F1Point> pts;
  for (double r : ratios) pts.push_back({r, -0.3 * std::pow(r, -0.5) + 0.9});
  const F1RatioFit fit = f1_ratio_model(pts);
  CHECK(std::abs(fit.a - 0.5) < 1e-6);
  CHECK(std::abs(fit.b + 0.3) < 1e-6);
  CHECK(std::abs(fit.c - 0.9) < 1e-6);
  CHECK(fit.residual_norm < 1e-8);
  double prev = -1.0;
  for (double r = 1.0; r < 300.0; r *= 1.5) {
    CHECK(fit(r) > prev);
    prev = fit(r);
  }

  std::vector<F1Point> flat;
  for (double r : ratios) flat.push_back({r, 0.77});
  const F1RatioFit cf = f1_ratio_model(flat);
  CHECK(std::abs(cf.b) < 1e-9);
  CHECK(cf.c == doctest::Approx(0.77));
  CHECK(cf.residual_norm < 1e-9);

  const std::vector<F1Point> same{{4, 0.5}, {4, 0.6}, {9, 0.7}};
  CHECK_THROWS_AS(f1_ratio_model(same), DataError);
}

TEST_CASE("measurement tables and fitted models") {
  std::string text = "# device run\nsf,time_ms\n";
  for (int sf = 1; sf <= 8; ++sf) text += std::to_string(sf) + "," + std::to_string(30 * sf + 100) + "\n";
  const TimeModel t = fit_time_model(parse_measurements(text, "t.csv"));
  CHECK(t(5.0, 144.0) == doctest::Approx(0.25));
  CHECK(t.fit_points == 8);
  CHECK(t.fit_residual < 1e-9);

  std::string both = "sf,ratio,time_ms\n";
  for (int sf : {1, 2, 4, 8})
    for (int ratio : {4, 16, 144})
      both += std::to_string(sf) + "," + std::to_string(ratio) + "," +
              std::to_string(sf * (20 + 0.5 * ratio) + 50) + "\n";
  const TimeModel tb = fit_time_model(parse_measurements(both, "tb.csv"));
  CHECK(tb(3.0, 36.0) == doctest::Approx(3 * (0.02 + 0.0005 * 36) + 0.05));

  ConfidenceModel truth;
  truth.c0 = 0.55;
  truth.c1 = 0.95;
  truth.sf0 = 5.0;
  truth.s = 0.8;
  std::string conf = "sf,f1\n";
  for (int sf = 1; sf <= 16; ++sf) conf += std::to_string(sf) + "," + std::to_string(confidence(truth, sf)) + "\n";
  const ConfidenceModel fitted = fit_confidence(parse_measurements(conf, "c.csv"));
  for (double sf = 1.0; sf <= 16.0; sf += 0.5) CHECK(confidence(fitted, sf) == doctest::Approx(confidence(truth, sf)).epsilon(1e-4));

  const auto f1 = f1_points(parse_measurements("ratio,f1\n1,0.6\n4,0.7\n", "f.csv"));
  CHECK(f1.size() == 2);
  CHECK_THROWS_AS(parse_measurements("sf,latency\n1,2\n", "x.csv"), DataError);
  CHECK_THROWS_AS(parse_measurements("sf,time_ms\n1\n", "x.csv"), DataError);
  CHECK_THROWS_AS(parse_measurements("sf,time_ms\n", "x.csv"), DataError);
  CHECK_THROWS_AS(fit_time_model(parse_measurements("sf,time_ms\n1,100\n2,50\n", "x.csv")), DataError);
}
