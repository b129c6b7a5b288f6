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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tilestream/geometry.hpp"
#include "tilestream/predictors.hpp"

namespace tilestream {

/// Quality levels 1..l with strictly increasing bitrates in Mbps.
class BitrateLadder {
 public:
  BitrateLadder();  // 1, 2.5, 5, 8, 16, 40
  explicit BitrateLadder(std::vector<double> mbps);

  int levels() const noexcept { return static_cast<int>(mbps_.size()); }
  double rate(int level) const;  // 1-based
  double low() const noexcept { return mbps_.front(); }
  double high() const noexcept { return mbps_.back(); }
  std::span<const double> rates() const noexcept { return mbps_; }

 private:
  std::vector<double> mbps_;
};

/// Per-tile class rank in [1, k]; k is the viewport class.
struct ClassMap {
  TileGrid grid;
  int k = 1;
  std::vector<int> rank;  // row-major

  int operator()(std::size_t r, std::size_t c) const { return rank[r * grid.cols + c]; }
};

/// Viewport set V = {p >= p_vp}, or the argmax tile when that is empty
/// (lowest index on ties); rank = max(k - Dis, 1).
ClassMap classify_tiles(const ProbabilityMatrix& p, double p_vp, int k);

struct ChunkDecision {
  TileGrid grid;
  std::vector<int> level;        // row-major, 1-based
  std::vector<int> class_level;  // class_level[r - 1] = level of rank r
  bool over_budget = false;

  int operator()(std::size_t r, std::size_t c) const { return level[r * grid.cols + c]; }
  double total_mbps(const BitrateLadder& ladder) const;
  double mean_level() const;
};

/// Expands a class -> level assignment onto the tiles.
ChunkDecision decision_from_classes(const ClassMap& classes, std::vector<int> class_level);

/// Same level on every tile; class_level filled for the given class count.
ChunkDecision uniform_decision(const TileGrid& grid, int k, int level);

struct ConfidenceModel {
  double c0 = 0.5;   // floor
  double c1 = 0.98;  // ceiling
  double sf0 = 4.0;  // midpoint
  double s = 1.0;    // steepness

  void validate() const;
};

/// c0 + (c1 - c0) * sigmoid(s * (sf - sf0)).
double confidence(const ConfidenceModel& model, double sf);

/// Prediction time T(sf, ratio) = a * sf * (c_r + d * ratio) + b seconds.
struct TimeModel {
  double a = 0.01;
  double c_r = 1.0;
  double d = 0.0;
  double b = 0.05;
  std::size_t fit_points = 0;   // 0 when not fitted
  double fit_residual = 0.0;    // RMS residual of the fit, seconds

  void validate() const;
  double operator()(double sf, double ratio) const { return a * sf * (c_r + d * ratio) + b; }
};

/// Q1 = conf / (m n) * sum rank * bitrate.
double qoe_q1(const ChunkDecision& decision, const ClassMap& classes, const BitrateLadder& ladder, double conf);

/// Q2 = |q1_now - q1_prev| + population stddev of bitrates over tiles with
/// rank > 1 (0 for fewer than two such tiles).
double qoe_q2(const ChunkDecision& decision, const ClassMap& classes, const BitrateLadder& ladder,
              double q1_now, double q1_prev);

/// All non-decreasing maps {1..k} -> {1..l}, lexicographic order.
std::vector<std::vector<int>> enumerate_class_assignments(int k, int l);

/// C(k + l - 1, k).
std::size_t candidate_count(int k, int l);

struct AbrInputs {
  double budget_mbps = 0.0;    // B_c
  double saliency_mbps = 0.0;  // B_SM
  double lambda = 2.0;
  double q1_prev = 0.0;
  double conf = 1.0;

  void validate() const;
};

struct CandidateScore {
  std::vector<int> class_level;
  double total_mbps = 0.0;
  double q1 = 0.0;
  double q2 = 0.0;
  double objective = 0.0;
  bool feasible = false;
};

/// Scores every candidate in enumeration order (debugging view of cba_solve).
std::vector<CandidateScore> cba_explain(const ClassMap& classes, const BitrateLadder& ladder,
                                        const AbrInputs& in);

/// Best feasible candidate by objective, then Q1, then the lexicographically
/// smaller assignment. All-level-1 flagged over_budget when nothing fits.
ChunkDecision cba_solve(const ClassMap& classes, const BitrateLadder& ladder, const AbrInputs& in);

/// Pyramid level(r) = max(l - (k - r), 1), lowered uniformly (floored at 1)
/// until it fits.
ChunkDecision pba_solve(const ClassMap& classes, const BitrateLadder& ladder, const AbrInputs& in);

/// True when sum of tile bitrates + B_SM <= B_c (relative slack 1e-9).
bool fits_budget(double total_mbps, const AbrInputs& in);

/// Saliency map of `pixels` float64 values sent once per chunk, in Mbps.
double saliency_cost_mbps(std::size_t pixels, double chunk_length_s);

struct OverheadPlan {
  double sf = 0.0;
  double ratio = 0.0;
  double predict_time_s = 0.0;
};

/// Largest sf in the ascending grid with T(sf, ratio) < L; InfeasibleError
/// when even the smallest one is too slow.
OverheadPlan plan_overheads(const TimeModel& model, double chunk_length_s, std::span<const double> sf_grid,
                            double ratio = 144.0);

struct F1RatioFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double residual_norm = 0.0;  // L2 norm of residuals
  double operator()(double ratio) const;
};

struct F1Point {
  double ratio = 0.0;
  double f1 = 0.0;
};

/// Least-squares fit of f1 = b * ratio^-a + c. Requires >= 3 distinct ratios.
F1RatioFit f1_ratio_model(std::span<const F1Point> points);

// Measurement CSVs (one header line, '#' comments allowed):
//   sf,time_ms           prediction time vs sampling frequency
//   sf,ratio,time_ms     prediction time vs both
//   ratio,time_ms        prediction time vs ratio at a fixed reference sf
//   sf,f1                accuracy vs sampling frequency (confidence fit)
//   ratio,f1             accuracy vs downsampling ratio (F1 model fit)
struct MeasurementTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::string origin;

  std::vector<double> column(const std::string& name) const;
  bool has(const std::string& name) const;
};

MeasurementTable parse_measurements(const std::string& text, const std::string& origin);
MeasurementTable load_measurements(const std::filesystem::path& path);

/// Least-squares time model from a table with time_ms and sf and/or ratio.
TimeModel fit_time_model(const MeasurementTable& table, double reference_sf = 1.0);

/// Logistic confidence fit to an sf,f1 table.
ConfidenceModel fit_confidence(const MeasurementTable& table);

std::vector<F1Point> f1_points(const MeasurementTable& table);

}  // namespace tilestream
