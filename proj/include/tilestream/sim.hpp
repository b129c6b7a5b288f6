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

#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tilestream/abr.hpp"
#include "tilestream/geometry.hpp"
#include "tilestream/predictors.hpp"
#include "tilestream/synthetic.hpp"

namespace tilestream {

/// Piecewise-constant throughput: points[i].mbps holds on [t_i, t_{i+1}),
/// the last value holds forever and the first one before t_0.
class BandwidthTrace {
 public:
  BandwidthTrace() = default;
  explicit BandwidthTrace(std::vector<BandwidthPoint> points);

  std::span<const BandwidthPoint> points() const noexcept { return points_; }
  BandwidthTrace scaled(double factor) const;
  double mbps_at(double t) const;
  /// Bits deliverable over [t0, t1].
  double capacity_bits(double t0, double t1) const;
  /// Seconds to move `bits` starting at `start` (exact inversion).
  double transfer_time(double bits, double start) const;

 private:
  std::vector<BandwidthPoint> points_;
};

/// Accepts `t_ms,bytes,ms_since_last` (each row is the interval ending at
/// t_ms; times rebased so the first interval starts at 0) or `t_s,mbps`.
BandwidthTrace parse_bandwidth_trace(const std::string& text, const std::string& origin);
BandwidthTrace load_bandwidth_trace(const std::filesystem::path& path);
std::string format_bandwidth_trace(const BandwidthTrace& trace);  // t_s,mbps

/// Moving average over the last 5 per-chunk measurements.
class ThroughputEstimator {
 public:
  static constexpr std::size_t kCapacity = 5;

  void record(double mbps);
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  /// Throws InvalidArgument when nothing has been recorded.
  double estimate() const;

 private:
  std::deque<double> samples_;
};

struct DownloadResult {
  double time_s = 0.0;
  double bits = 0.0;
};

/// bits = sum of tile bitrates (Mbps) * L * 1e6 + saliency bytes * 8.
DownloadResult download_model(const ChunkDecision& decision, const BitrateLadder& ladder,
                              double saliency_bytes, const BandwidthTrace& trace, double start_s,
                              double chunk_length_s);

/// Everything a predictor may look at when chunk `chunk` is requested.
struct PredictionContext {
  std::size_t chunk = 0;
  double t_now = 0.0;    // end of the history window (chunk start)
  double horizon = 1.0;  // chunk length
  double sf = 4.0;
  std::size_t window = 5;
  TileGrid grid;
  FovSpec fov;
  WindowSource source;                             // maps already at the predictor resolution
  std::span<const ViewportSample> future_samples;  // only for the oracle stub
};

class ViewportPredictor {
 public:
  virtual ~ViewportPredictor() = default;
  virtual std::string name() const = 0;
  /// True when the predictor consumes per-chunk saliency maps, whose
  /// transmission is then charged against the chunk budget.
  virtual bool uses_saliency() const = 0;
  virtual ProbabilityMatrix predict(const PredictionContext& ctx) const = 0;
};

class LinearRegressionPredictor : public ViewportPredictor {
 public:
  std::string name() const override { return "lr"; }
  bool uses_saliency() const override { return false; }
  ProbabilityMatrix predict(const PredictionContext& ctx) const override;
};

class ConvLstmPredictor : public ViewportPredictor {
 public:
  explicit ConvLstmPredictor(ConvLstm model) : model_(std::move(model)) {}
  std::string name() const override { return "convlstm"; }
  bool uses_saliency() const override { return true; }
  ProbabilityMatrix predict(const PredictionContext& ctx) const override;
  const ConvLstm& model() const noexcept { return model_; }

 private:
  ConvLstm model_;
};

/// Test stub: the tiles actually viewed during the chunk.
class OraclePredictor : public ViewportPredictor {
 public:
  std::string name() const override { return "oracle"; }
  bool uses_saliency() const override { return false; }
  ProbabilityMatrix predict(const PredictionContext& ctx) const override;
};

/// Test stub: the same probability on every tile.
class ConstantPredictor : public ViewportPredictor {
 public:
  explicit ConstantPredictor(double p = 0.0) : p_(p) {}
  std::string name() const override { return p_ == 0.0 ? "zero" : "constant"; }
  bool uses_saliency() const override { return false; }
  ProbabilityMatrix predict(const PredictionContext& ctx) const override;

 private:
  double p_;
};

enum class AbrKind { kCba, kPba };
std::string abr_name(AbrKind kind);
AbrKind parse_abr(const std::string& name);

struct SessionConfig {
  double chunk_length_s = 1.0;
  TileGrid grid;
  BitrateLadder ladder;
  double lambda = 2.0;
  FovSpec fov;
  double sf = 4.0;
  std::size_t ratio = 144;
  std::size_t window = 5;
  double p_vp = 0.5;
  double initial_estimate_mbps = 10.0;
  ConfidenceModel confidence;
  AbrKind abr = AbrKind::kCba;
  std::size_t chunks = 0;  // 0: one per saliency map

  void validate() const;
  int classes() const { return ladder.levels(); }
};

struct ChunkRecord {
  std::size_t chunk = 0;
  double request_s = 0.0;
  double arrival_s = 0.0;
  double deadline_s = 0.0;
  ProbabilityMatrix prediction;
  ClassMap classes;
  ChunkDecision decision;
  double estimated_mbps = 0.0;  // B_c used by the solver
  double saliency_mbps = 0.0;   // B_SM charged
  double saliency_bytes = 0.0;
  double measured_mbps = 0.0;
  double bits = 0.0;
  double download_s = 0.0;
  double rebuffer_s = 0.0;
  double q1 = 0.0;
  double q2 = 0.0;
  double objective = 0.0;
  PredictionMetrics accuracy;
};

struct SessionSummary {
  double avg_quality_level = 0.0;
  double quality_level_change = 0.0;
  double rebuffer_total_s = 0.0;
  double bandwidth_total_mbit = 0.0;
  double mean_accuracy = 0.0;
  double mean_f1 = 0.0;
  double mean_objective = 0.0;
  std::size_t chunks = 0;
};

struct SessionLog {
  std::string predictor;
  std::string abr;
  std::vector<ChunkRecord> records;
};

/// Inputs of one session. Saliency maps are one per chunk at any resolution;
/// they are area-downsampled to the configured ratio when needed.
struct SessionInputs {
  std::span<const ViewportSample> head;
  std::span<const SaliencyMap> chunk_saliency;
  const BandwidthTrace* bandwidth = nullptr;
};

SessionLog simulate_session(const SessionInputs& inputs, const ViewportPredictor& predictor,
                            const SessionConfig& config);

SessionSummary aggregate_metrics(const SessionLog& log);

inline constexpr const char* kSessionSchema = "# schema=tilestream.session/1";
inline constexpr const char* kSummarySchema = "# schema=tilestream.summary/1";

std::string format_session_csv(const SessionLog& log);
/// Header line for summary rows; `keys` name the leading identifying columns.
std::string summary_csv_header(std::span<const std::string> keys);
std::string summary_csv_row(std::span<const std::string> key_values, const SessionSummary& s);

/// Prediction quality on chunks 1..n-1 of a session, with the same
/// prediction contexts the simulator builds. Chunk 0 has no history.
std::vector<PredictionMetrics> evaluate_prediction(std::span<const ViewportSample> head,
                                                   std::span<const SaliencyMap> chunk_saliency,
                                                   const ViewportPredictor& predictor, const SessionConfig& cfg);

/// Area-downsamples each map to the ratio's shape unless it already has it.
std::vector<SaliencyMap> prepare_saliency(std::span<const SaliencyMap> maps, const TileGrid& grid,
                                          std::size_t ratio);

}  // namespace tilestream
