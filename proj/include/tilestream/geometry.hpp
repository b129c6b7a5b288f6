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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tilestream {

/// m x n partition of an equirectangular frame. Row 0 is the top (pitch
/// +90); column 0 starts at yaw -180.
struct TileGrid {
  std::size_t rows = 10;
  std::size_t cols = 20;

  TileGrid() = default;
  TileGrid(std::size_t rows, std::size_t cols);

  std::size_t tile_count() const noexcept { return rows * cols; }
  double row_height_deg() const noexcept { return 180.0 / static_cast<double>(rows); }
  double col_width_deg() const noexcept { return 360.0 / static_cast<double>(cols); }

  friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

struct Tile {
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const Tile&, const Tile&) = default;
  friend auto operator<=>(const Tile&, const Tile&) = default;
};

/// One head-orientation sample: time in seconds, yaw in [-180,180),
/// pitch in [-90,90], both in degrees.
struct ViewportSample {
  double t = 0.0;
  double yaw = 0.0;
  double pitch = 0.0;
};

/// Angular extent of the field of view.
struct FovSpec {
  double h_deg = 90.0;
  double v_deg = 90.0;

  void validate() const;
};

/// Wraps any yaw into [-180, 180).
double wrap_yaw(double yaw);
void validate_sample(const ViewportSample& s);

/// Binary m x n occupancy.
class TileMatrix {
 public:
  TileMatrix() = default;
  explicit TileMatrix(TileGrid grid, std::uint8_t fill = 0);

  const TileGrid& grid() const noexcept { return grid_; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return cells_[r * grid_.cols + c]; }
  void set(std::size_t r, std::size_t c, bool on) { cells_[r * grid_.cols + c] = on ? 1 : 0; }
  std::span<const std::uint8_t> cells() const noexcept { return cells_; }
  std::size_t count() const;
  std::vector<Tile> ones() const;

  /// Elementwise OR; grids must match.
  TileMatrix& operator|=(const TileMatrix& other);

  friend bool operator==(const TileMatrix&, const TileMatrix&) = default;

 private:
  TileGrid grid_;
  std::vector<std::uint8_t> cells_;
};

/// Non-negative heat map over an ERP frame, row-major.
class SaliencyMap {
 public:
  SaliencyMap() = default;
  SaliencyMap(std::size_t height, std::size_t width, double fill = 0.0);
  SaliencyMap(std::size_t height, std::size_t width, std::vector<double> values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator()(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }
  double& operator()(std::size_t y, std::size_t x) { return values_[y * width_ + x]; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double total() const;
  /// Scales to unit mass; throws InvalidArgument on an all-zero map.
  SaliencyMap& normalize();

  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

/// Marks every tile whose angular rectangle overlaps the FoV rectangle
/// centred on the sample (positive-area overlap; yaw wraps around).
TileMatrix viewport_to_tiles(const ViewportSample& sample, const TileGrid& grid, const FovSpec& fov);

/// |dr| + min(|dc|, n - |dc|).
std::size_t wrap_manhattan_distance(const Tile& a, const Tile& b, const TileGrid& grid);

/// Minimum wrap distance from `tile` to any member; throws on an empty set.
std::size_t min_distance_to_set(const Tile& tile, std::span<const Tile> set, const TileGrid& grid);

/// Shape (H', W') with H'*W' = ratio * tile count and W' = 2 H'. Throws
/// InvalidArgument when no such integer shape exists.
std::pair<std::size_t, std::size_t> downsampled_shape(const TileGrid& grid, std::size_t ratio);

/// Area-average pooling to ratio * tile_count pixels at 2:1 aspect, then
/// renormalised to unit mass.
SaliencyMap downsample_saliency(const SaliencyMap& map, const TileGrid& grid, std::size_t ratio);

/// Area-average resize to an arbitrary target shape (no renormalisation).
SaliencyMap resize_area(const SaliencyMap& map, std::size_t height, std::size_t width);

/// Union of the viewports of every sample in a chunk.
TileMatrix ground_truth_tiles(std::span<const ViewportSample> samples, const TileGrid& grid,
                              const FovSpec& fov);

struct PredictionMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline constexpr double kDefaultThreshold = 0.5;

/// Binarises `probabilities` (row-major m x n) at `threshold` (p >= t).
PredictionMetrics prediction_metrics(std::span<const double> probabilities, const TileMatrix& truth,
                                     double threshold = kDefaultThreshold);

// Head-movement trace CSV: header `t,yaw,pitch`.
std::vector<ViewportSample> parse_head_trace(const std::string& text, const std::string& origin);
std::vector<ViewportSample> load_head_trace(const std::filesystem::path& path);
std::string format_head_trace(std::span<const ViewportSample> samples);

// Saliency map container, little-endian:
//   "TSSALMAP" 8-byte magic, u32 height, u32 width, f64 values[height*width]
inline constexpr char kSaliencyMagic[8] = {'T', 'S', 'S', 'A', 'L', 'M', 'A', 'P'};
std::vector<std::uint8_t> encode_saliency(const SaliencyMap& map);
SaliencyMap decode_saliency(std::span<const std::uint8_t> bytes);
void save_saliency(const std::filesystem::path& path, const SaliencyMap& map);
SaliencyMap load_saliency(const std::filesystem::path& path);
/// Hand-authored maps: one row per line, comma-separated non-negative values.
SaliencyMap parse_saliency_csv(const std::string& text, const std::string& origin);

}  // namespace tilestream
