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

#include "tilestream/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "tilestream/binary_io.hpp"
#include "tilestream/error.hpp"

namespace tilestream {

TileGrid::TileGrid(std::size_t r, std::size_t c) : rows(r), cols(c) {
  if (rows < 1) throw InvalidArgument("tile grid needs at least one row");
  if (cols < 2 || cols % 2 != 0)
    throw InvalidArgument("tile grid column count must be even and >= 2, got " + std::to_string(cols));
}

void FovSpec::validate() const {
  if (!(h_deg > 0.0 && h_deg <= 360.0)) throw InvalidArgument("fov horizontal extent must lie in (0,360]");
  if (!(v_deg > 0.0 && v_deg <= 180.0)) throw InvalidArgument("fov vertical extent must lie in (0,180]");
}

double wrap_yaw(double yaw) {
  double y = std::fmod(yaw + 180.0, 360.0);
  if (y < 0.0) y += 360.0;
  y -= 180.0;
  return y >= 180.0 ? -180.0 : y;
}

void validate_sample(const ViewportSample& s) {
  if (!(s.t >= 0.0)) throw InvalidArgument("viewport sample time must be >= 0");
  if (!(s.yaw >= -180.0 && s.yaw < 180.0)) throw InvalidArgument("yaw outside [-180,180)");
  if (!(s.pitch >= -90.0 && s.pitch <= 90.0)) throw InvalidArgument("pitch outside [-90,90]");
}

TileMatrix::TileMatrix(TileGrid grid, std::uint8_t fill)
    : grid_(grid), cells_(grid.tile_count(), fill ? 1 : 0) {}

std::size_t TileMatrix::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 1));
}

std::vector<Tile> TileMatrix::ones() const {
  std::vector<Tile> out;
  for (std::size_t r = 0; r < grid_.rows; ++r)
    for (std::size_t c = 0; c < grid_.cols; ++c)
      if ((*this)(r, c)) out.push_back({r, c});
  return out;
}

TileMatrix& TileMatrix::operator|=(const TileMatrix& other) {
  if (!(grid_ == other.grid_)) throw InvalidArgument("tile matrix grid mismatch");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] |= other.cells_[i];
  return *this;
}

SaliencyMap::SaliencyMap(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), values_(height * width, fill) {
  if (height == 0 || width == 0) throw InvalidArgument("saliency map dimensions must be positive");
  if (fill < 0.0) throw InvalidArgument("saliency values must be non-negative");
}

SaliencyMap::SaliencyMap(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height == 0 || width == 0) throw InvalidArgument("saliency map dimensions must be positive");
  if (values_.size() != height * width) throw InvalidArgument("saliency value count mismatch");
  for (double v : values_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("saliency values must be finite and >= 0");
}

double SaliencyMap::total() const {
  double s = 0.0;
  for (double v : values_) s += v;
  return s;
}

SaliencyMap& SaliencyMap::normalize() {
  const double s = total();
  if (!(s > 0.0)) throw InvalidArgument("cannot normalise an all-zero saliency map");
  for (double& v : values_) v /= s;
  return *this;
}

namespace {

bool overlaps(double a_lo, double a_hi, double b_lo, double b_hi) { return a_lo < b_hi && b_lo < a_hi; }

}  // namespace

TileMatrix viewport_to_tiles(const ViewportSample& sample, const TileGrid& grid, const FovSpec& fov) {
  validate_sample(sample);
  fov.validate();
  TileMatrix out(grid);
  const double p_lo = std::max(-90.0, sample.pitch - fov.v_deg / 2.0);
  const double p_hi = std::min(90.0, sample.pitch + fov.v_deg / 2.0);
  const double y_lo = sample.yaw - fov.h_deg / 2.0;
  const double y_hi = sample.yaw + fov.h_deg / 2.0;
  const double rh = grid.row_height_deg(), cw = grid.col_width_deg();
  for (std::size_t r = 0; r < grid.rows; ++r) {
    const double row_hi = 90.0 - static_cast<double>(r) * rh;
    const double row_lo = 90.0 - static_cast<double>(r + 1) * rh;
    if (!overlaps(p_lo, p_hi, row_lo, row_hi)) continue;
    for (std::size_t c = 0; c < grid.cols; ++c) {
      bool hit = fov.h_deg >= 360.0;
      const double col_lo = -180.0 + static_cast<double>(c) * cw;
      const double col_hi = col_lo + cw;
      for (double shift : {-360.0, 0.0, 360.0})
        hit = hit || overlaps(y_lo, y_hi, col_lo + shift, col_hi + shift);
      if (hit) out.set(r, c, true);
    }
  }
  return out;
}

std::size_t wrap_manhattan_distance(const Tile& a, const Tile& b, const TileGrid& grid) {
  if (a.row >= grid.rows || b.row >= grid.rows || a.col >= grid.cols || b.col >= grid.cols)
    throw InvalidArgument("tile index outside grid");
  const std::size_t dr = a.row > b.row ? a.row - b.row : b.row - a.row;
  const std::size_t dc = a.col > b.col ? a.col - b.col : b.col - a.col;
  return dr + std::min(dc, grid.cols - dc);
}

std::size_t min_distance_to_set(const Tile& tile, std::span<const Tile> set, const TileGrid& grid) {
  if (set.empty()) throw InvalidArgument("distance to an empty tile set is undefined");
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (const Tile& t : set) best = std::min(best, wrap_manhattan_distance(tile, t, grid));
  return best;
}

std::pair<std::size_t, std::size_t> downsampled_shape(const TileGrid& grid, std::size_t ratio) {
  if (ratio == 0) throw InvalidArgument("downsampling ratio must be positive");
  const std::size_t pixels = ratio * grid.tile_count();
  if (pixels % 2 != 0)
    throw InvalidArgument("ratio " + std::to_string(ratio) + " gives an odd pixel count");
  const std::size_t half = pixels / 2;
  auto h = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(half))));
  while (h * h > half) --h;
  while ((h + 1) * (h + 1) <= half) ++h;
  if (h * h != half)
    throw InvalidArgument("ratio " + std::to_string(ratio) + " x " +
                          std::to_string(grid.tile_count()) + " tiles has no 2:1 integer shape");
  return {h, 2 * h};
}

SaliencyMap resize_area(const SaliencyMap& map, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw InvalidArgument("resize target must be positive");
  // Per-axis overlap weights of each output cell with source cells.
  auto weights = [](std::size_t src, std::size_t dst) {
    std::vector<std::vector<std::pair<std::size_t, double>>> w(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t o = 0; o < dst; ++o) {
      const double lo = static_cast<double>(o) * scale, hi = lo + scale;
      for (auto s = static_cast<std::size_t>(std::floor(lo)); s < src && static_cast<double>(s) < hi; ++s) {
        const double ov = std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
        if (ov > 0.0) w[o].emplace_back(s, ov / scale);
      }
    }
    return w;
  };
  const auto wy = weights(map.height(), height);
  const auto wx = weights(map.width(), width);
  SaliencyMap out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (const auto& [sy, fy] : wy[y])
        for (const auto& [sx, fx] : wx[x]) acc += fy * fx * map(sy, sx);
      out(y, x) = acc;
    }
  return out;
}

SaliencyMap downsample_saliency(const SaliencyMap& map, const TileGrid& grid, std::size_t ratio) {
  const auto [h, w] = downsampled_shape(grid, ratio);
  if (map.height() < h || map.width() < w)
    throw InvalidArgument("saliency map " + std::to_string(map.height()) + "x" +
                          std::to_string(map.width()) + " is smaller than target " +
                          std::to_string(h) + "x" + std::to_string(w));
  SaliencyMap out = resize_area(map, h, w);
  out.normalize();
  return out;
}

TileMatrix ground_truth_tiles(std::span<const ViewportSample> samples, const TileGrid& grid,
                              const FovSpec& fov) {
  if (samples.empty()) throw InvalidArgument("ground truth needs at least one sample");
  TileMatrix out(grid);
  for (const auto& s : samples) out |= viewport_to_tiles(s, grid, fov);
  return out;
}

PredictionMetrics prediction_metrics(std::span<const double> probabilities, const TileMatrix& truth,
                                     double threshold) {
  if (probabilities.size() != truth.grid().tile_count())
    throw InvalidArgument("prediction and ground truth shapes differ");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must lie in (0,1)");
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  const auto cells = truth.cells();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const bool pred = probabilities[i] >= threshold;
    const bool real = cells[i] != 0;
    if (pred && real) ++tp;
    else if (pred) ++fp;
    else if (real) ++fn;
    else ++tn;
  }
  PredictionMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(cells.size());
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

std::vector<ViewportSample> parse_head_trace(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<ViewportSample> out;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    auto fields = io::split(t, ',');
    if (!header) {
      if (fields != std::vector<std::string>{"t", "yaw", "pitch"})
        throw DataError(where + ": expected header 't,yaw,pitch'");
      header = true;
      continue;
    }
    if (fields.size() != 3) throw DataError(where + ": expected 3 fields");
    ViewportSample s{io::parse_double(fields[0], where), wrap_yaw(io::parse_double(fields[1], where)),
                     io::parse_double(fields[2], where)};
    if (!(s.t >= 0.0)) throw DataError(where + ": negative time");
    if (!(s.pitch >= -90.0 && s.pitch <= 90.0)) throw DataError(where + ": pitch outside [-90,90]");
    if (!out.empty() && !(s.t > out.back().t)) throw DataError(where + ": time not strictly increasing");
    out.push_back(s);
  }
  if (!header) throw DataError(origin + ": missing header 't,yaw,pitch'");
  if (out.empty()) throw DataError(origin + ": no samples");
  return out;
}

std::vector<ViewportSample> load_head_trace(const std::filesystem::path& path) {
  return parse_head_trace(io::read_text_file(path), path.string());
}

std::string format_head_trace(std::span<const ViewportSample> samples) {
  std::ostringstream os;
  os.precision(17);
  os << "t,yaw,pitch\n";
  for (const auto& s : samples) os << s.t << ',' << s.yaw << ',' << s.pitch << '\n';
  return os.str();
}

std::vector<std::uint8_t> encode_saliency(const SaliencyMap& map) {
  io::ByteWriter w;
  w.bytes(kSaliencyMagic, sizeof kSaliencyMagic);
  w.u32(static_cast<std::uint32_t>(map.height()));
  w.u32(static_cast<std::uint32_t>(map.width()));
  w.bytes(map.values().data(), map.size() * sizeof(double));
  return w.take();
}

SaliencyMap decode_saliency(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kSaliencyMagic, sizeof magic) != 0) throw DataError("not a saliency map (bad magic)");
  const std::size_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0 || h * w > (1u << 26)) throw DataError("saliency map: bad dimensions");
  std::vector<double> v(h * w);
  r.bytes(v.data(), v.size() * sizeof(double));
  if (!r.at_end()) throw DataError("saliency map: trailing bytes");
  try {
    return SaliencyMap(h, w, std::move(v));
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("saliency map: ") + e.what());
  }
}

void save_saliency(const std::filesystem::path& path, const SaliencyMap& map) {
  io::write_file(path, encode_saliency(map));
}

SaliencyMap load_saliency(const std::filesystem::path& path) {
  try {
    return decode_saliency(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

SaliencyMap parse_saliency_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0, width = 0;
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = io::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    auto fields = io::split(t, ',');
    if (width == 0) width = fields.size();
    if (fields.size() != width) throw DataError(where + ": ragged row");
    for (const auto& f : fields) {
      const double v = io::parse_double(f, where);
      if (!(v >= 0.0)) throw DataError(where + ": negative saliency");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(origin + ": empty saliency csv");
  return SaliencyMap(rows, width, std::move(values));
}

}  // namespace tilestream
