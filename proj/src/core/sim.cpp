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

#include "tilestream/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tilestream/binary_io.hpp"
#include "tilestream/error.hpp"

namespace tilestream {

BandwidthTrace::BandwidthTrace(std::vector<BandwidthPoint> points) : points_(std::move(points)) {
  if (points_.empty()) throw DataError("bandwidth trace is empty");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!std::isfinite(points_[i].t) || !(points_[i].mbps > 0.0) || !std::isfinite(points_[i].mbps))
      throw DataError("bandwidth trace point " + std::to_string(i) + ": throughput must be finite and > 0");
    if (i > 0 && !(points_[i].t > points_[i - 1].t))
      throw DataError("bandwidth trace point " + std::to_string(i) + ": time must strictly increase");
  }
}

BandwidthTrace BandwidthTrace::scaled(double factor) const {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw InvalidArgument("bandwidth scale must be > 0");
  auto pts = points_;
  for (auto& p : pts) p.mbps *= factor;
  return BandwidthTrace(std::move(pts));
}

double BandwidthTrace::mbps_at(double t) const {
  if (points_.empty()) throw InvalidArgument("empty bandwidth trace");
  auto it = std::upper_bound(points_.begin(), points_.end(), t,
                             [](double v, const BandwidthPoint& p) { return v < p.t; });
  return it == points_.begin() ? points_.front().mbps : (it - 1)->mbps;
}

double BandwidthTrace::capacity_bits(double t0, double t1) const {
  if (points_.empty()) throw InvalidArgument("empty bandwidth trace");
  if (t1 <= t0) return 0.0;
  double bits = 0.0, t = t0;
  while (t < t1) {
    auto it = std::upper_bound(points_.begin(), points_.end(), t,
                               [](double v, const BandwidthPoint& p) { return v < p.t; });
    const double rate = it == points_.begin() ? points_.front().mbps : (it - 1)->mbps;
    const double next = it == points_.end() ? t1 : std::min(t1, it->t);
    bits += rate * 1e6 * (next - t);
    t = next;
  }
  return bits;
}

double BandwidthTrace::transfer_time(double bits, double start) const {
  if (points_.empty()) throw InvalidArgument("empty bandwidth trace");
  if (!(bits >= 0.0)) throw InvalidArgument("payload must be >= 0");
  double left = bits, t = start;
  auto it = std::upper_bound(points_.begin(), points_.end(), t,
                             [](double v, const BandwidthPoint& p) { return v < p.t; });
  while (true) {
    const double rate = (it == points_.begin() ? points_.front().mbps : (it - 1)->mbps) * 1e6;
    if (it == points_.end()) return t + left / rate - start;
    const double room = rate * (it->t - t);
    if (room >= left) return t + left / rate - start;
    left -= room;
    t = it->t;
    ++it;
  }
}

BandwidthTrace parse_bandwidth_trace(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  enum class Format { kUnknown, kBytes, kMbps } format = Format::kUnknown;
  std::vector<BandwidthPoint> pts;
  double base = 0.0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = io::trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto f = io::split(s, ',');
    if (format == Format::kUnknown) {
      if (f == std::vector<std::string>{"t_ms", "bytes", "ms_since_last"})
        format = Format::kBytes;
      else if (f == std::vector<std::string>{"t_s", "mbps"})
        format = Format::kMbps;
      else
        throw DataError(where + ": unrecognised bandwidth header (expected t_ms,bytes,ms_since_last or t_s,mbps)");
      continue;
    }
    if (format == Format::kMbps) {
      if (f.size() != 2) throw DataError(where + ": expected 2 fields");
      const double t = io::parse_double(f[0], where), mbps = io::parse_double(f[1], where);
      if (!(mbps > 0.0)) throw DataError(where + ": throughput must be > 0");
      if (!pts.empty() && !(t > pts.back().t)) throw DataError(where + ": time must strictly increase");
      pts.push_back({t, mbps});
    } else {
      if (f.size() != 3) throw DataError(where + ": expected 3 fields");
      const double t_ms = io::parse_double(f[0], where), bytes = io::parse_double(f[1], where);
      const double gap = io::parse_double(f[2], where);
      if (!(gap > 0.0)) throw DataError(where + ": ms_since_last must be > 0");
      if (!(bytes > 0.0)) throw DataError(where + ": bytes must be > 0");
      const double start_ms = t_ms - gap;
      if (pts.empty()) base = start_ms;
      const double t = (start_ms - base) / 1000.0;
      if (!pts.empty() && !(t > pts.back().t)) throw DataError(where + ": intervals must move forward in time");
      pts.push_back({t, bytes * 8.0 / (gap / 1000.0) / 1e6});
    }
  }
  if (format == Format::kUnknown) throw DataError(origin + ": missing header");
  if (pts.empty()) throw DataError(origin + ": no bandwidth samples");
  return BandwidthTrace(std::move(pts));
}

BandwidthTrace load_bandwidth_trace(const std::filesystem::path& path) {
  return parse_bandwidth_trace(io::read_text_file(path), path.string());
}

std::string format_bandwidth_trace(const BandwidthTrace& trace) {
  // Shortest round-trip form, so parse(format(trace)) is exact.
  std::string out = "t_s,mbps\n";
  char buf[32];
  for (const auto& p : trace.points()) {
    out.append(buf, std::to_chars(buf, buf + sizeof buf, p.t).ptr);
    out += ',';
    out.append(buf, std::to_chars(buf, buf + sizeof buf, p.mbps).ptr);
    out += '\n';
  }
  return out;
}

void ThroughputEstimator::record(double mbps) {
  if (!(mbps > 0.0) || !std::isfinite(mbps)) throw InvalidArgument("throughput sample must be finite and > 0");
  samples_.push_back(mbps);
  if (samples_.size() > kCapacity) samples_.pop_front();
}

double ThroughputEstimator::estimate() const {
  if (samples_.empty()) throw InvalidArgument("throughput estimator has no samples");
  return std::accumulate(samples_.begin(), samples_.end(), 0.0) / static_cast<double>(samples_.size());
}

DownloadResult download_model(const ChunkDecision& decision, const BitrateLadder& ladder, double saliency_bytes,
                              const BandwidthTrace& trace, double start_s, double chunk_length_s) {
  if (!(chunk_length_s > 0.0)) throw InvalidArgument("chunk length must be > 0");
  if (!(saliency_bytes >= 0.0)) throw InvalidArgument("saliency bytes must be >= 0");
  DownloadResult r;
  r.bits = decision.total_mbps(ladder) * chunk_length_s * 1e6 + saliency_bytes * 8.0;
  r.time_s = trace.transfer_time(r.bits, start_s);
  return r;
}

ProbabilityMatrix LinearRegressionPredictor::predict(const PredictionContext& ctx) const {
  const auto history = sample_history(ctx.source.head, ctx.t_now, ctx.sf, std::max<std::size_t>(ctx.window, 2));
  // At the very start every sample clamps to t = 0; assume the viewer holds still.
  if (history.front().t == history.back().t)
    return ProbabilityMatrix::from_tiles(viewport_to_tiles(history.back(), ctx.grid, ctx.fov));
  return lr_predict(history, ctx.horizon, ctx.grid, ctx.fov);
}

ProbabilityMatrix ConvLstmPredictor::predict(const PredictionContext& ctx) const {
  if (!(model_.config().grid == ctx.grid)) throw InvalidArgument("convlstm model was built for a different grid");
  return model_.predict(build_history_window(ctx.source, ctx.t_now, ctx.sf, model_.config().window, ctx.horizon,
                                             ctx.grid, ctx.fov));
}

ProbabilityMatrix OraclePredictor::predict(const PredictionContext& ctx) const {
  return ProbabilityMatrix::from_tiles(ground_truth_tiles(ctx.future_samples, ctx.grid, ctx.fov));
}

ProbabilityMatrix ConstantPredictor::predict(const PredictionContext& ctx) const {
  return ProbabilityMatrix(ctx.grid, p_);
}

std::string abr_name(AbrKind kind) { return kind == AbrKind::kCba ? "cba" : "pba"; }

AbrKind parse_abr(const std::string& name) {
  if (name == "cba") return AbrKind::kCba;
  if (name == "pba") return AbrKind::kPba;
  throw ConfigError("unknown abr '" + name + "' (expected cba or pba)");
}

void SessionConfig::validate() const {
  if (!(chunk_length_s > 0.0)) throw ConfigError("chunk_length must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(sf > 0.0)) throw ConfigError("sf must be > 0");
  if (window < 2) throw ConfigError("window must be >= 2");
  if (!(p_vp > 0.0 && p_vp < 1.0)) throw ConfigError("p_vp must lie in (0,1)");
  if (!(initial_estimate_mbps > 0.0)) throw ConfigError("initial_estimate must be > 0");
  fov.validate();
  confidence.validate();
  downsampled_shape(grid, ratio);
}

std::vector<SaliencyMap> prepare_saliency(std::span<const SaliencyMap> maps, const TileGrid& grid,
                                          std::size_t ratio) {
  const auto [h, w] = downsampled_shape(grid, ratio);
  std::vector<SaliencyMap> out;
  out.reserve(maps.size());
  for (const auto& m : maps) {
    if (m.height() == h && m.width() == w) {
      SaliencyMap copy = m;
      out.push_back(std::move(copy.normalize()));
    } else {
      out.push_back(downsample_saliency(m, grid, ratio));
    }
  }
  return out;
}

SessionLog simulate_session(const SessionInputs& inputs, const ViewportPredictor& predictor,
                            const SessionConfig& cfg) {
  cfg.validate();
  if (!inputs.bandwidth) throw InvalidArgument("session needs a bandwidth trace");
  if (inputs.head.empty()) throw DataError("session needs a head trace");
  if (inputs.chunk_saliency.empty()) throw DataError("session needs saliency maps");
  const std::size_t chunks = cfg.chunks == 0 ? inputs.chunk_saliency.size() : cfg.chunks;
  if (chunks > inputs.chunk_saliency.size())
    throw DataError("saliency maps cover " + std::to_string(inputs.chunk_saliency.size()) + " chunks, session needs " +
                    std::to_string(chunks));

  const double L = cfg.chunk_length_s;
  const std::vector<SaliencyMap> maps = prepare_saliency(inputs.chunk_saliency, cfg.grid, cfg.ratio);
  const std::size_t pixels = maps.front().height() * maps.front().width();
  const bool charge_saliency = predictor.uses_saliency();
  const double sm_mbps = charge_saliency ? saliency_cost_mbps(pixels, L) : 0.0;
  const double sm_bytes = charge_saliency ? static_cast<double>(pixels) * 8.0 : 0.0;
  const double conf = confidence(cfg.confidence, cfg.sf);
  const int k = cfg.classes();

  SessionLog log{predictor.name(), abr_name(cfg.abr), {}};
  ThroughputEstimator estimator;
  double prev_arrival = 0.0, stalled = 0.0, q1_prev = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const double start = static_cast<double>(c) * L;
    const auto viewed = samples_between(inputs.head, start, start + L);
    if (viewed.empty()) throw DataError("head trace underrun: no samples in chunk " + std::to_string(c));

    PredictionContext ctx{c,       start,    L,       cfg.sf, cfg.window, cfg.grid,
                          cfg.fov, {inputs.head, maps, L}, viewed};
    ChunkRecord rec;
    rec.chunk = c;
    rec.prediction = predictor.predict(ctx);
    rec.classes = classify_tiles(rec.prediction, cfg.p_vp, k);
    rec.estimated_mbps = estimator.empty() ? cfg.initial_estimate_mbps : estimator.estimate();
    rec.saliency_mbps = sm_mbps;
    rec.saliency_bytes = sm_bytes;

    AbrInputs in{rec.estimated_mbps, sm_mbps, cfg.lambda, q1_prev, conf};
    if (c == 0) {
      rec.decision = decision_from_classes(rec.classes, std::vector<int>(static_cast<std::size_t>(k), 1));
      rec.decision.over_budget = !fits_budget(rec.decision.total_mbps(cfg.ladder), in);
    } else {
      rec.decision = cfg.abr == AbrKind::kCba ? cba_solve(rec.classes, cfg.ladder, in)
                                              : pba_solve(rec.classes, cfg.ladder, in);
    }
    rec.q1 = qoe_q1(rec.decision, rec.classes, cfg.ladder, conf);
    rec.q2 = qoe_q2(rec.decision, rec.classes, cfg.ladder, rec.q1, q1_prev);
    rec.objective = rec.q1 - cfg.lambda * rec.q2;
    q1_prev = rec.q1;

    rec.request_s = std::max(prev_arrival, start);
    const DownloadResult dl =
        download_model(rec.decision, cfg.ladder, sm_bytes, *inputs.bandwidth, rec.request_s, L);
    rec.bits = dl.bits;
    rec.download_s = dl.time_s;
    rec.arrival_s = rec.request_s + dl.time_s;
    rec.measured_mbps = dl.bits / dl.time_s / 1e6;
    estimator.record(rec.measured_mbps);

    // One-chunk startup delay; playback stalls until a late chunk arrives.
    rec.deadline_s = start + L + stalled;
    const double late = rec.arrival_s - rec.deadline_s;
    rec.rebuffer_s = late > 1e-9 * L ? late : 0.0;
    stalled += rec.rebuffer_s;
    prev_arrival = rec.arrival_s;

    rec.accuracy = prediction_metrics(rec.prediction.values(), ground_truth_tiles(viewed, cfg.grid, cfg.fov));
    log.records.push_back(std::move(rec));
  }
  return log;
}

std::vector<PredictionMetrics> evaluate_prediction(std::span<const ViewportSample> head,
                                                   std::span<const SaliencyMap> chunk_saliency,
                                                   const ViewportPredictor& predictor, const SessionConfig& cfg) {
  cfg.validate();
  if (head.empty()) throw DataError("session needs a head trace");
  const std::size_t chunks = cfg.chunks == 0 ? chunk_saliency.size() : cfg.chunks;
  if (chunks < 2 || chunks > chunk_saliency.size()) throw DataError("evaluation needs at least two chunks with saliency");
  const double L = cfg.chunk_length_s;
  const std::vector<SaliencyMap> maps = prepare_saliency(chunk_saliency, cfg.grid, cfg.ratio);
  std::vector<PredictionMetrics> out;
  for (std::size_t c = 1; c < chunks; ++c) {
    const double start = static_cast<double>(c) * L;
    const auto viewed = samples_between(head, start, start + L);
    if (viewed.empty()) throw DataError("head trace underrun: no samples in chunk " + std::to_string(c));
    PredictionContext ctx{c, start, L, cfg.sf, cfg.window, cfg.grid, cfg.fov, {head, maps, L}, viewed};
    out.push_back(prediction_metrics(predictor.predict(ctx).values(), ground_truth_tiles(viewed, cfg.grid, cfg.fov)));
  }
  return out;
}

SessionSummary aggregate_metrics(const SessionLog& log) {
  if (log.records.empty()) throw InvalidArgument("cannot aggregate an empty session log");
  SessionSummary s;
  s.chunks = log.records.size();
  double change = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const ChunkRecord& r = log.records[i];
    const double mean = r.decision.mean_level();
    s.avg_quality_level += mean;
    if (i > 0) change += std::abs(mean - log.records[i - 1].decision.mean_level());
    // Intra-chunk spread over tiles outside the lowest class, as in Q2.
    double n = 0.0, sum = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < r.decision.level.size(); ++t)
      if (r.classes.rank[t] > 1) {
        n += 1.0;
        sum += r.decision.level[t];
      }
    if (n >= 2.0) {
      const double m = sum / n;
      for (std::size_t t = 0; t < r.decision.level.size(); ++t)
        if (r.classes.rank[t] > 1) sq += (r.decision.level[t] - m) * (r.decision.level[t] - m);
      spread += std::sqrt(sq / n);
    }
    s.rebuffer_total_s += r.rebuffer_s;
    s.bandwidth_total_mbit += r.bits / 1e6;
    s.mean_accuracy += r.accuracy.accuracy;
    s.mean_f1 += r.accuracy.f1;
    s.mean_objective += r.objective;
  }
  const double n = static_cast<double>(s.chunks);
  s.avg_quality_level /= n;
  s.quality_level_change = (s.chunks > 1 ? change / (n - 1.0) : 0.0) + spread / n;
  s.mean_accuracy /= n;
  s.mean_f1 /= n;
  s.mean_objective /= n;
  return s;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string format_session_csv(const SessionLog& log) {
  std::string out = std::string(kSessionSchema) + " predictor=" + log.predictor + " abr=" + log.abr + "\n";
  out +=
      "chunk,request_s,arrival_s,deadline_s,estimated_mbps,saliency_mbps,measured_mbps,bits,download_s,"
      "rebuffer_s,mean_level,class_levels,over_budget,q1,q2,objective,accuracy,precision,recall,f1\n";
  for (const auto& r : log.records) {
    std::string levels;
    for (std::size_t i = 0; i < r.decision.class_level.size(); ++i)
      levels += (i ? "-" : "") + std::to_string(r.decision.class_level[i]);
    out += std::to_string(r.chunk) + "," + fmt(r.request_s) + "," + fmt(r.arrival_s) + "," + fmt(r.deadline_s) + "," +
           fmt(r.estimated_mbps) + "," + fmt(r.saliency_mbps) + "," + fmt(r.measured_mbps) + "," + fmt(r.bits) + "," +
           fmt(r.download_s) + "," + fmt(r.rebuffer_s) + "," + fmt(r.decision.mean_level()) + "," + levels + "," +
           (r.decision.over_budget ? "1" : "0") + "," + fmt(r.q1) + "," + fmt(r.q2) + "," + fmt(r.objective) + "," +
           fmt(r.accuracy.accuracy) + "," + fmt(r.accuracy.precision) + "," + fmt(r.accuracy.recall) + "," +
           fmt(r.accuracy.f1) + "\n";
  }
  return out;
}

std::string summary_csv_header(std::span<const std::string> keys) {
  std::string out;
  for (const auto& k : keys) out += k + ",";
  return out +
         "chunks,avg_quality_level,quality_level_change,rebuffer_total_s,bandwidth_total_mbit,mean_accuracy,"
         "mean_f1,mean_objective\n";
}

std::string summary_csv_row(std::span<const std::string> key_values, const SessionSummary& s) {
  std::string out;
  for (const auto& k : key_values) out += k + ",";
  return out + std::to_string(s.chunks) + "," + fmt(s.avg_quality_level) + "," + fmt(s.quality_level_change) + "," +
         fmt(s.rebuffer_total_s) + "," + fmt(s.bandwidth_total_mbit) + "," + fmt(s.mean_accuracy) + "," +
         fmt(s.mean_f1) + "," + fmt(s.mean_objective) + "\n";
}

}  // namespace tilestream
