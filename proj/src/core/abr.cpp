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

#include "tilestream/abr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "tilestream/binary_io.hpp"
#include "tilestream/error.hpp"

namespace tilestream {

BitrateLadder::BitrateLadder() : BitrateLadder({1.0, 2.5, 5.0, 8.0, 16.0, 40.0}) {}

BitrateLadder::BitrateLadder(std::vector<double> mbps) : mbps_(std::move(mbps)) {
  if (mbps_.size() < 2) throw InvalidArgument("bitrate ladder needs at least 2 levels");
  for (std::size_t i = 0; i < mbps_.size(); ++i) {
    if (!(mbps_[i] > 0.0) || !std::isfinite(mbps_[i])) throw InvalidArgument("bitrate ladder: rates must be positive");
    if (i > 0 && !(mbps_[i] > mbps_[i - 1])) throw InvalidArgument("bitrate ladder: rates must strictly increase");
  }
}

double BitrateLadder::rate(int level) const {
  if (level < 1 || level > levels())
    throw InvalidArgument("quality level " + std::to_string(level) + " outside 1.." + std::to_string(levels()));
  return mbps_[static_cast<std::size_t>(level - 1)];
}

ClassMap classify_tiles(const ProbabilityMatrix& p, double p_vp, int k) {
  if (!(p_vp > 0.0 && p_vp < 1.0)) throw InvalidArgument("p_vp must lie in (0,1)");
  if (k < 1) throw InvalidArgument("class count must be >= 1");
  const TileGrid& g = p.grid();
  std::vector<Tile> viewport;
  std::size_t best = 0;
  const auto values = p.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= p_vp) viewport.push_back({i / g.cols, i % g.cols});
    if (values[i] > values[best]) best = i;
  }
  if (viewport.empty()) viewport.push_back({best / g.cols, best % g.cols});

  ClassMap out{g, k, std::vector<int>(g.tile_count())};
  for (std::size_t i = 0; i < out.rank.size(); ++i) {
    const auto dis = static_cast<long long>(min_distance_to_set({i / g.cols, i % g.cols}, viewport, g));
    out.rank[i] = static_cast<int>(std::max<long long>(k - dis, 1));
  }
  return out;
}

double ChunkDecision::total_mbps(const BitrateLadder& ladder) const {
  double total = 0.0;
  for (int l : level) total += ladder.rate(l);
  return total;
}

double ChunkDecision::mean_level() const {
  if (level.empty()) return 0.0;
  double s = 0.0;
  for (int l : level) s += l;
  return s / static_cast<double>(level.size());
}

ChunkDecision decision_from_classes(const ClassMap& classes, std::vector<int> class_level) {
  if (class_level.size() != static_cast<std::size_t>(classes.k))
    throw InvalidArgument("class assignment has " + std::to_string(class_level.size()) + " entries for " +
                          std::to_string(classes.k) + " classes");
  ChunkDecision d{classes.grid, std::vector<int>(classes.rank.size()), std::move(class_level), false};
  for (std::size_t i = 0; i < classes.rank.size(); ++i)
    d.level[i] = d.class_level[static_cast<std::size_t>(classes.rank[i] - 1)];
  return d;
}

ChunkDecision uniform_decision(const TileGrid& grid, int k, int level) {
  return {grid, std::vector<int>(grid.tile_count(), level), std::vector<int>(static_cast<std::size_t>(k), level),
          false};
}

void ConfidenceModel::validate() const {
  if (!(c0 >= 0.0 && c0 < 1.0)) throw InvalidArgument("confidence floor c0 must lie in [0,1)");
  if (!(c1 > c0 && c1 <= 1.0)) throw InvalidArgument("confidence ceiling c1 must lie in (c0,1]");
  if (!(s >= 0.0) || !std::isfinite(sf0)) throw InvalidArgument("confidence steepness must be >= 0");
}

double confidence(const ConfidenceModel& m, double sf) {
  if (!(sf >= 0.0)) throw InvalidArgument("sampling frequency must be >= 0");
  const double sig = 1.0 / (1.0 + std::exp(-m.s * (sf - m.sf0)));
  return m.c0 + (m.c1 - m.c0) * sig;
}

void TimeModel::validate() const {
  for (double v : {a, c_r, d, b})
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("time model coefficients must be finite and >= 0");
}

namespace {

void check_consistent(const ChunkDecision& d, const ClassMap& classes) {
  if (!(d.grid == classes.grid) || d.level.size() != classes.rank.size())
    throw InvalidArgument("decision and class map disagree on the grid");
  if (!d.class_level.empty()) {
    if (d.class_level.size() != static_cast<std::size_t>(classes.k))
      throw InvalidArgument("decision records a different class count");
    for (std::size_t i = 0; i < d.level.size(); ++i)
      if (d.level[i] != d.class_level[static_cast<std::size_t>(classes.rank[i] - 1)])
        throw InvalidArgument("decision level disagrees with its class assignment");
  }
}

}  // namespace

double qoe_q1(const ChunkDecision& d, const ClassMap& classes, const BitrateLadder& ladder, double conf) {
  check_consistent(d, classes);
  double s = 0.0;
  for (std::size_t i = 0; i < d.level.size(); ++i) s += classes.rank[i] * ladder.rate(d.level[i]);
  return conf * s / static_cast<double>(d.level.size());
}

double qoe_q2(const ChunkDecision& d, const ClassMap& classes, const BitrateLadder& ladder, double q1_now,
              double q1_prev) {
  check_consistent(d, classes);
  double n = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < d.level.size(); ++i)
    if (classes.rank[i] > 1) {
      n += 1.0;
      sum += ladder.rate(d.level[i]);
    }
  double sd = 0.0;
  if (n >= 2.0) {
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < d.level.size(); ++i)
      if (classes.rank[i] > 1) ss += (ladder.rate(d.level[i]) - mean) * (ladder.rate(d.level[i]) - mean);
    sd = std::sqrt(ss / n);
  }
  return std::abs(q1_now - q1_prev) + sd;
}

std::vector<std::vector<int>> enumerate_class_assignments(int k, int l) {
  if (k < 1 || l < 1) throw InvalidArgument("class and level counts must be >= 1");
  std::vector<std::vector<int>> out;
  std::vector<int> cur(static_cast<std::size_t>(k), 1);
  while (true) {
    out.push_back(cur);
    // Advance like an odometer that keeps the sequence non-decreasing.
    int i = k - 1;
    while (i >= 0 && cur[static_cast<std::size_t>(i)] == l) --i;
    if (i < 0) break;
    const int v = cur[static_cast<std::size_t>(i)] + 1;
    for (int j = i; j < k; ++j) cur[static_cast<std::size_t>(j)] = v;
  }
  return out;
}

std::size_t candidate_count(int k, int l) {
  if (k < 1 || l < 1) throw InvalidArgument("class and level counts must be >= 1");
  // C(k + l - 1, k) computed incrementally; exact for the small sizes used.
  std::size_t c = 1;
  for (int i = 1; i <= k; ++i) c = c * static_cast<std::size_t>(l - 1 + i) / static_cast<std::size_t>(i);
  return c;
}

void AbrInputs::validate() const {
  if (!std::isfinite(budget_mbps) || budget_mbps < 0.0) throw InvalidArgument("budget must be finite and >= 0");
  if (!std::isfinite(saliency_mbps) || saliency_mbps < 0.0) throw InvalidArgument("saliency cost must be >= 0");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  if (!(conf > 0.0 && conf <= 1.0)) throw InvalidArgument("confidence must lie in (0,1]");
}

bool fits_budget(double total_mbps, const AbrInputs& in) {
  return total_mbps + in.saliency_mbps <= in.budget_mbps + 1e-9 * std::max(1.0, std::abs(in.budget_mbps));
}

std::vector<CandidateScore> cba_explain(const ClassMap& classes, const BitrateLadder& ladder, const AbrInputs& in) {
  in.validate();
  std::vector<CandidateScore> out;
  for (auto& assignment : enumerate_class_assignments(classes.k, ladder.levels())) {
    const ChunkDecision d = decision_from_classes(classes, assignment);
    CandidateScore s;
    s.total_mbps = d.total_mbps(ladder);
    s.feasible = fits_budget(s.total_mbps, in);
    s.q1 = qoe_q1(d, classes, ladder, in.conf);
    s.q2 = qoe_q2(d, classes, ladder, s.q1, in.q1_prev);
    s.objective = s.q1 - in.lambda * s.q2;
    s.class_level = std::move(assignment);
    out.push_back(std::move(s));
  }
  return out;
}

ChunkDecision cba_solve(const ClassMap& classes, const BitrateLadder& ladder, const AbrInputs& in) {
  const auto scores = cba_explain(classes, ladder, in);
  const CandidateScore* best = nullptr;
  // Enumeration is lexicographic, so keeping the first of equals keeps the
  // lexicographically smaller assignment.
  for (const auto& s : scores) {
    if (!s.feasible) continue;
    if (!best || s.objective > best->objective || (s.objective == best->objective && s.q1 > best->q1)) best = &s;
  }
  if (!best) {
    ChunkDecision d = uniform_decision(classes.grid, classes.k, 1);
    d.over_budget = true;
    return d;
  }
  return decision_from_classes(classes, best->class_level);
}

ChunkDecision pba_solve(const ClassMap& classes, const BitrateLadder& ladder, const AbrInputs& in) {
  in.validate();
  const int k = classes.k, l = ladder.levels();
  for (int drop = 0;; ++drop) {
    std::vector<int> levels(static_cast<std::size_t>(k));
    bool floor_everywhere = true;
    for (int r = 1; r <= k; ++r) {
      const int lv = std::max(l - (k - r) - drop, 1);
      levels[static_cast<std::size_t>(r - 1)] = lv;
      floor_everywhere = floor_everywhere && lv == 1;
    }
    ChunkDecision d = decision_from_classes(classes, std::move(levels));
    if (fits_budget(d.total_mbps(ladder), in)) return d;
    if (floor_everywhere) {
      d.over_budget = true;
      return d;
    }
  }
}

double saliency_cost_mbps(std::size_t pixels, double chunk_length_s) {
  if (!(chunk_length_s > 0.0)) throw InvalidArgument("chunk length must be > 0");
  return static_cast<double>(pixels) * 8.0 * 8.0 / chunk_length_s / 1e6;
}

OverheadPlan plan_overheads(const TimeModel& model, double chunk_length_s, std::span<const double> sf_grid,
                            double ratio) {
  model.validate();
  if (!(chunk_length_s > 0.0)) throw InvalidArgument("chunk length must be > 0");
  if (sf_grid.empty()) throw InvalidArgument("sampling-frequency grid is empty");
  for (std::size_t i = 0; i < sf_grid.size(); ++i) {
    if (!(sf_grid[i] > 0.0)) throw InvalidArgument("sampling frequencies must be > 0");
    if (i > 0 && !(sf_grid[i] > sf_grid[i - 1])) throw InvalidArgument("sampling-frequency grid must ascend");
  }
  OverheadPlan plan{0.0, ratio, 0.0};
  for (double sf : sf_grid) {
    const double t = model(sf, ratio);
    if (t < chunk_length_s) plan = {sf, ratio, t};
  }
  if (plan.sf == 0.0) {
    std::ostringstream msg;
    msg << "no sampling frequency meets the deadline: T(" << sf_grid.front() << ", " << ratio
        << ") = " << model(sf_grid.front(), ratio) << " s >= chunk length " << chunk_length_s << " s";
    throw InfeasibleError(msg.str());
  }
  return plan;
}

double F1RatioFit::operator()(double ratio) const { return b * std::pow(ratio, -a) + c; }

namespace {

struct LinearSolution {
  Eigen::VectorXd coef;
  double sse = 0.0;
};

LinearSolution least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  LinearSolution s;
  s.coef = x.colPivHouseholderQr().solve(y);
  s.sse = (x * s.coef - y).squaredNorm();
  return s;
}

constexpr int kBrentBits = 40;

}  // namespace

F1RatioFit f1_ratio_model(std::span<const F1Point> points) {
  std::vector<double> distinct;
  for (const auto& p : points) {
    if (!(p.ratio > 0.0) || !std::isfinite(p.f1)) throw DataError("f1 fit: ratios must be > 0 and f1 finite");
    distinct.push_back(p.ratio);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) throw DataError("f1 fit needs at least 3 distinct ratios");

  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = points[static_cast<std::size_t>(i)].f1;
  // For fixed a the model is linear in (b, c).
  auto solve_for = [&](double a) {
    Eigen::MatrixXd x(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = std::pow(points[static_cast<std::size_t>(i)].ratio, -a);
      x(i, 1) = 1.0;
    }
    return least_squares(x, y);
  };

  // Seed on a log-spaced grid, then refine with Brent in the bracketing cell.
  const double lo = 1e-4, hi = 8.0;
  const int grid = 80;
  std::vector<double> as(grid);
  for (int i = 0; i < grid; ++i) as[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (grid - 1));
  int best = 0;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int i = 0; i < grid; ++i) {
    const double sse = solve_for(as[i]).sse;
    if (sse < best_sse) {
      best_sse = sse;
      best = i;
    }
  }
  const double left = as[std::max(best - 1, 0)], right = as[std::min(best + 1, grid - 1)];
  const auto refined =
      boost::math::tools::brent_find_minima([&](double a) { return solve_for(a).sse; }, left, right, kBrentBits);
  double a = refined.first;
  if (solve_for(as[best]).sse < refined.second) a = as[best];
  const LinearSolution s = solve_for(a);
  return {a, s.coef[0], s.coef[1], std::sqrt(s.sse)};
}

bool MeasurementTable::has(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

std::vector<double> MeasurementTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw DataError(origin + ": missing column '" + name + "'");
  const auto idx = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[idx]);
  return out;
}

MeasurementTable parse_measurements(const std::string& text, const std::string& origin) {
  MeasurementTable t;
  t.origin = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = io::trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    auto fields = io::split(s, ',');
    if (t.columns.empty()) {
      for (const auto& f : fields)
        if (f != "sf" && f != "ratio" && f != "time_ms" && f != "f1")
          throw DataError(where + ": unknown measurement column '" + f + "'");
      t.columns = std::move(fields);
      continue;
    }
    if (fields.size() != t.columns.size())
      throw DataError(where + ": expected " + std::to_string(t.columns.size()) + " fields");
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(io::parse_double(f, where));
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty()) throw DataError(origin + ": missing header");
  if (t.rows.empty()) throw DataError(origin + ": no measurements");
  return t;
}

MeasurementTable load_measurements(const std::filesystem::path& path) {
  return parse_measurements(io::read_text_file(path), path.string());
}

TimeModel fit_time_model(const MeasurementTable& table, double reference_sf) {
  const auto ms = table.column("time_ms");
  const auto n = static_cast<Eigen::Index>(ms.size());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = ms[static_cast<std::size_t>(i)] / 1000.0;
  const bool has_sf = table.has("sf"), has_ratio = table.has("ratio");
  if (!has_sf && !has_ratio) throw DataError(table.origin + ": time table needs an sf or ratio column");
  const std::size_t cols = has_sf && has_ratio ? 3 : 2;
  if (ms.size() < cols) throw DataError(table.origin + ": too few points for the time model");

  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(cols));
  const auto sf = has_sf ? table.column("sf") : std::vector<double>(ms.size(), reference_sf);
  const auto ratio = has_ratio ? table.column("ratio") : std::vector<double>(ms.size(), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (has_sf && has_ratio) {
      x(i, 0) = sf[k];
      x(i, 1) = sf[k] * ratio[k];
    } else if (has_sf) {
      x(i, 0) = sf[k];
    } else {
      x(i, 0) = sf[k] * ratio[k];
    }
    x(i, static_cast<Eigen::Index>(cols) - 1) = 1.0;
  }
  const LinearSolution s = least_squares(x, y);
  TimeModel m;
  m.a = 1.0;
  if (has_sf && has_ratio) {
    m.c_r = s.coef[0];
    m.d = s.coef[1];
    m.b = s.coef[2];
  } else if (has_sf) {
    m.c_r = s.coef[0];
    m.d = 0.0;
    m.b = s.coef[1];
  } else {
    // Ratio-only data cannot separate a * sf * c_r from b; the constant goes to b.
    m.c_r = 0.0;
    m.d = s.coef[0];
    m.b = s.coef[1];
  }
  m.fit_points = ms.size();
  m.fit_residual = std::sqrt(s.sse / static_cast<double>(ms.size()));
  for (double v : {m.c_r, m.d, m.b})
    if (v < 0.0)
      throw DataError(table.origin + ": fitted time model has a negative coefficient; T must not decrease");
  return m;
}

ConfidenceModel fit_confidence(const MeasurementTable& table) {
  const auto sf = table.column("sf"), f1 = table.column("f1");
  std::vector<double> distinct = sf;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 4) throw DataError(table.origin + ": confidence fit needs at least 4 distinct sf values");

  const auto n = static_cast<Eigen::Index>(sf.size());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = f1[static_cast<std::size_t>(i)];
  // For fixed (sf0, s) the model c0 (1 - sig) + c1 sig is linear.
  auto solve_for = [&](double sf0, double s) {
    Eigen::MatrixXd x(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-s * (sf[static_cast<std::size_t>(i)] - sf0)));
      x(i, 0) = 1.0 - sig;
      x(i, 1) = sig;
    }
    return least_squares(x, y);
  };
  const double lo_sf = distinct.front(), hi_sf = distinct.back();
  double best_sf0 = lo_sf, best_s = 1.0, best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 30; ++i)
    for (int j = 0; j <= 30; ++j) {
      const double sf0 = lo_sf + (hi_sf - lo_sf) * i / 30.0;
      const double s = 0.05 * std::pow(400.0, j / 30.0);
      const double sse = solve_for(sf0, s).sse;
      if (sse < best) {
        best = sse;
        best_sf0 = sf0;
        best_s = s;
      }
    }
  // A few rounds of coordinate-wise Brent refinement.
  for (int round = 0; round < 4; ++round) {
    const double span_sf = (hi_sf - lo_sf) / 30.0;
    best_sf0 = boost::math::tools::brent_find_minima([&](double v) { return solve_for(v, best_s).sse; },
                                                     best_sf0 - span_sf, best_sf0 + span_sf, kBrentBits)
                   .first;
    best_s = boost::math::tools::brent_find_minima([&](double v) { return solve_for(best_sf0, v).sse; },
                                                   best_s * 0.7, best_s * 1.4, kBrentBits)
                 .first;
  }
  const LinearSolution s = solve_for(best_sf0, best_s);
  ConfidenceModel m;
  m.sf0 = best_sf0;
  m.s = best_s;
  m.c0 = std::clamp(s.coef[0], 0.0, 0.999);
  m.c1 = std::clamp(s.coef[1], m.c0 + 1e-6, 1.0);
  m.validate();
  return m;
}

std::vector<F1Point> f1_points(const MeasurementTable& table) {
  const auto ratio = table.column("ratio"), f1 = table.column("f1");
  std::vector<F1Point> out;
  for (std::size_t i = 0; i < ratio.size(); ++i) out.push_back({ratio[i], f1[i]});
  return out;
}

}  // namespace tilestream
