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

#include "tilestream/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tilestream/error.hpp"
#include "tilestream/random.hpp"

namespace tilestream {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double great_circle_deg(double yaw1, double pitch1, double yaw2, double pitch2) {
  const double p1 = pitch1 * kDeg, p2 = pitch2 * kDeg;
  const double dl = (yaw2 - yaw1) * kDeg;
  const double a = std::sin((p2 - p1) / 2) * std::sin((p2 - p1) / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * std::asin(std::min(1.0, std::sqrt(a))) / kDeg;
}

void require(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace

void PlantedSessionConfig::validate() const {
  require(duration_s > 0 && chunk_length_s > 0, "planted session: duration and chunk length must be > 0");
  require(head_rate_hz > 0, "planted session: head rate must be > 0");
  require(jump_rate_hz >= 0 && drift_deg_s >= 0, "planted session: negative motion parameter");
  require(max_object_pitch >= 0 && max_object_pitch <= 90, "planted session: object pitch out of range");
  require(blob_sigma_deg > 0, "planted session: blob sigma must be > 0");
  require(background_noise >= 0 && head_jitter_deg >= 0, "planted session: negative noise");
  require(follow_rate_hz > 0 && follow_rate_hz < head_rate_hz, "planted session: follow rate out of range");
  require(jitter_corr_s > 0, "planted session: jitter correlation time must be > 0");
  require(map_height > 0 && map_width > 0, "planted session: empty map");
}

SaliencyMap render_saliency_blob(double yaw, double pitch, double sigma_deg, std::size_t height,
                                 std::size_t width) {
  SaliencyMap map(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    const double py = 90.0 - (static_cast<double>(r) + 0.5) * 180.0 / static_cast<double>(height);
    for (std::size_t c = 0; c < width; ++c) {
      const double px = -180.0 + (static_cast<double>(c) + 0.5) * 360.0 / static_cast<double>(width);
      const double d = great_circle_deg(yaw, pitch, px, py);
      map(r, c) = std::exp(-0.5 * d * d / (sigma_deg * sigma_deg));
    }
  }
  map.normalize();
  return map;
}

PlantedSession generate_planted_session(const PlantedSessionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng object_rng = Rng::derive(seed, 1);
  Rng head_rng = Rng::derive(seed, 2);
  Rng map_rng = Rng::derive(seed, 3);

  const double dt = 1.0 / cfg.head_rate_hz;
  const auto steps = static_cast<std::size_t>(std::ceil(cfg.duration_s * cfg.head_rate_hz - 1e-9));
  PlantedSession out;
  out.head.reserve(steps);
  out.object.reserve(steps);

  double oy = object_rng.uniform(-180.0, 180.0);
  double op = object_rng.uniform(-cfg.max_object_pitch, cfg.max_object_pitch);
  double dir = object_rng.uniform() < 0.5 ? -1.0 : 1.0;
  double hy = oy, hp = op;
  double ny = 0.0, np = 0.0;
  const double jump_p = 1.0 - std::exp(-cfg.jump_rate_hz * dt);
  const double decay = std::exp(-dt / cfg.jitter_corr_s);
  const double innov = cfg.head_jitter_deg * std::sqrt(1.0 - decay * decay);
  const double follow = 1.0 - std::exp(-cfg.follow_rate_hz * dt);

  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (k > 0) {
      if (object_rng.uniform() < jump_p) {
        oy = object_rng.uniform(-180.0, 180.0);
        op = object_rng.uniform(-cfg.max_object_pitch, cfg.max_object_pitch);
        dir = object_rng.uniform() < 0.5 ? -1.0 : 1.0;
      } else {
        oy = wrap_yaw(oy + dir * cfg.drift_deg_s * dt);
      }
      hy = wrap_yaw(hy + follow * wrap_yaw(oy - hy));
      hp += follow * (op - hp);
      ny = decay * ny + innov * head_rng.normal();
      np = decay * np + innov * head_rng.normal();
    }
    out.object.push_back({t, oy, op});
    out.head.push_back({t, wrap_yaw(hy + ny), std::clamp(hp + np, -90.0, 90.0)});
  }

  const auto chunks = static_cast<std::size_t>(std::ceil(cfg.duration_s / cfg.chunk_length_s - 1e-9));
  for (std::size_t c = 0; c < chunks; ++c) {
    const double mid = (static_cast<double>(c) + 0.5) * cfg.chunk_length_s;
    const auto idx = std::min(steps - 1, static_cast<std::size_t>(mid / dt));
    SaliencyMap map = render_saliency_blob(out.object[idx].yaw, out.object[idx].pitch, cfg.blob_sigma_deg,
                                           cfg.map_height, cfg.map_width);
    double peak = 0.0;
    for (double v : map.values()) peak = std::max(peak, v);
    for (double& v : map.values()) v += cfg.background_noise * peak * map_rng.uniform();
    map.normalize();
    out.chunk_saliency.push_back(std::move(map));
  }
  return out;
}

void BandwidthTraceConfig::validate() const {
  require(duration_s > 0 && step_s > 0, "bandwidth trace: duration and step must be > 0");
  require(mean_mbps > 0 && floor_mbps > 0, "bandwidth trace: throughput must be > 0");
  require(volatility >= 0 && reversion >= 0 && reversion <= 1, "bandwidth trace: bad dynamics");
}

std::vector<BandwidthPoint> generate_bandwidth_points(const BandwidthTraceConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::derive(seed, 7);
  const double log_mean = std::log(cfg.mean_mbps);
  double x = log_mean;
  std::vector<BandwidthPoint> out;
  for (double t = 0.0; t < cfg.duration_s - 1e-9; t += cfg.step_s) {
    out.push_back({t, std::max(cfg.floor_mbps, std::exp(x))});
    x += cfg.reversion * (log_mean - x) + cfg.volatility * rng.normal();
  }
  return out;
}

void SaliencyVideoConfig::validate() const {
  require(videos > 0, "saliency videos: need at least one video");
  require(height >= 4 && width >= 4, "saliency videos: frame too small");
  require(blob_sigma_px > 0 && target_sigma_px > 0 && noise >= 0, "saliency videos: bad blob parameters");
}

SyntheticSaliencyVideos::SyntheticSaliencyVideos(SaliencyVideoConfig config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
}

std::size_t SyntheticSaliencyVideos::frame_count(std::size_t video) const {
  if (video >= config_.videos) throw InvalidArgument("saliency videos: video index out of range");
  return config_.frames;
}

int SyntheticSaliencyVideos::polarity(std::size_t video) const {
  if (video >= config_.videos) throw InvalidArgument("saliency videos: video index out of range");
  Rng rng = Rng::derive(seed_, 0xB10B0000ull + video);
  return rng.uniform() < 0.5 ? 1 : -1;
}

SaliencySample SyntheticSaliencyVideos::frame(std::size_t video, std::size_t index) const {
  if (index >= frame_count(video)) throw InvalidArgument("saliency videos: frame index out of range");
  Rng rng = Rng::derive(seed_, (static_cast<std::uint64_t>(video) << 32) | index);
  const std::size_t h = config_.height, w = config_.width;
  const double hh = static_cast<double>(h), ww = static_cast<double>(w);
  double br, bc, dr, dc;
  do {
    br = rng.uniform(1.0, hh - 1.0);
    bc = rng.uniform(1.0, ww - 1.0);
    dr = rng.uniform(1.0, hh - 1.0);
    dc = rng.uniform(1.0, ww - 1.0);
  } while (std::hypot(br - dr, bc - dc) < 3.0 * config_.blob_sigma_px);

  auto bump = [](double r, double c, double cr, double cc, double s) {
    const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
    return std::exp(-0.5 * d2 / (s * s));
  };
  const bool bright_salient = polarity(video) > 0;
  const double sr = bright_salient ? br : dr, sc = bright_salient ? bc : dc;
  Tensor features({1, h, w});
  std::vector<double> target(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double y = static_cast<double>(r) + 0.5, x = static_cast<double>(c) + 0.5;
      features.at(0, r, c) = bump(y, x, br, bc, config_.blob_sigma_px) - bump(y, x, dr, dc, config_.blob_sigma_px) +
                             config_.noise * rng.normal();
      target[r * w + c] = bump(y, x, sr, sc, config_.target_sigma_px);
    }
  }
  SaliencyMap map(h, w, std::move(target));
  map.normalize();
  return {std::move(features), std::move(map)};
}

}  // namespace tilestream
