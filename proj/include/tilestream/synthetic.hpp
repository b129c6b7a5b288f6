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
#include <vector>

#include "tilestream/geometry.hpp"
#include "tilestream/meta.hpp"

namespace tilestream {

// Planted-signal sessions: a salient object drifts across the sphere and
// occasionally jumps; the viewer follows it with lag and jitter. Saliency
// maps are Gaussian bumps (great-circle distance) around the object plus
// background noise, one map per chunk.
struct PlantedSessionConfig {
  double duration_s = 60.0;
  double chunk_length_s = 1.0;
  double head_rate_hz = 30.0;
  double jump_rate_hz = 0.3;       // Poisson rate of object jumps
  double drift_deg_s = 12.0;       // object yaw speed between jumps
  double max_object_pitch = 30.0;
  double blob_sigma_deg = 25.0;
  double background_noise = 0.05;  // uniform noise amplitude relative to the peak
  double follow_rate_hz = 3.0;     // head approaches the object at this rate
  double head_jitter_deg = 4.0;    // stationary stddev of the head noise
  double jitter_corr_s = 0.5;      // correlation time of the head noise
  std::size_t map_height = 20;
  std::size_t map_width = 40;

  void validate() const;
};

struct PlantedSession {
  std::vector<ViewportSample> head;            // head_rate_hz samples over [0, duration)
  std::vector<ViewportSample> object;          // object centre, same timestamps
  std::vector<SaliencyMap> chunk_saliency;     // map of chunk c rendered at its midpoint
  std::size_t chunk_count() const noexcept { return chunk_saliency.size(); }
};

PlantedSession generate_planted_session(const PlantedSessionConfig& config, std::uint64_t seed);

/// Unit-mass map with a Gaussian bump around `center` (great-circle distance)
/// and no noise.
SaliencyMap render_saliency_blob(double yaw, double pitch, double sigma_deg, std::size_t height,
                                 std::size_t width);

struct BandwidthTraceConfig {
  double duration_s = 120.0;
  double step_s = 1.0;
  double mean_mbps = 20.0;
  double volatility = 0.15;   // stddev of the log-throughput innovations
  double reversion = 0.2;     // pull of log-throughput back to the mean per step
  double floor_mbps = 0.5;

  void validate() const;
};

struct BandwidthPoint {
  double t = 0.0;     // seconds
  double mbps = 0.0;
};

/// Mean-reverting log-normal throughput, one point per step starting at t=0.
std::vector<BandwidthPoint> generate_bandwidth_points(const BandwidthTraceConfig& config, std::uint64_t seed);

// Synthetic saliency videos for meta-learning. Each frame holds a bright and
// a dark Gaussian blob on a noisy background; per video, one of the two is
// the salient one, so tasks disagree and a few support samples identify
// which rule applies.
struct SaliencyVideoConfig {
  std::size_t videos = 16;
  std::size_t frames = 40;
  std::size_t height = 8;
  std::size_t width = 16;
  double blob_sigma_px = 1.2;
  double target_sigma_px = 1.0;
  double noise = 0.1;

  void validate() const;
};

class SyntheticSaliencyVideos : public VideoFeatureSource {
 public:
  SyntheticSaliencyVideos(SaliencyVideoConfig config, std::uint64_t seed);

  std::size_t video_count() const override { return config_.videos; }
  std::size_t frame_count(std::size_t video) const override;
  SaliencySample frame(std::size_t video, std::size_t index) const override;

  /// +1 when the bright blob is salient in `video`, -1 when the dark one is.
  int polarity(std::size_t video) const;
  const SaliencyVideoConfig& config() const noexcept { return config_; }

 private:
  SaliencyVideoConfig config_;
  std::uint64_t seed_;
};

}  // namespace tilestream
