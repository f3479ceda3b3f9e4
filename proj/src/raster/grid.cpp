#include "nudgex/raster/grid.hpp"

#include "nudgex/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

namespace nudgex::raster {

namespace {

constexpr std::array<std::string_view, 14> kSentinel2Bands = {
    "B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B10", "B11", "B12", "SCL"};

}  // namespace

std::span<const std::string_view> sentinel2_band_ids() { return kSentinel2Bands; }

bool is_class_band(std::string_view id) { return canonical_band_id(id) == "SCL"; }

std::string canonical_band_id(std::string_view id) {
  std::string up;
  for (char c : id) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "SCL" || up == "B8A") return up;
  if (up.size() >= 2 && up[0] == 'B' && std::all_of(up.begin() + 1, up.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    int n = std::stoi(up.substr(1));
    if (n >= 1 && n <= 12) return fmt::format("B{:02d}", n);
  }
  return std::string(id);
}

RasterGrid::RasterGrid(std::size_t width, std::size_t height) : width_(width), height_(height), nodata_(width * height, 0) {
  if (width == 0 || height == 0) throw Error(Errc::dimension, "raster width and height must be positive");
}

Band& RasterGrid::add_band(std::string id, BandKind kind, std::vector<float> values) {
  if (values.size() != pixel_count()) {
    throw Error(Errc::dimension, fmt::format("band {} has {} samples, grid has {}", id, values.size(), pixel_count()));
  }
  if (has_band(id)) throw Error(Errc::argument, fmt::format("duplicate band {}", id));
  bands_.push_back(Band{std::move(id), kind, std::move(values)});
  return bands_.back();
}

Band& RasterGrid::add_band(std::string id, BandKind kind) {
  return add_band(std::move(id), kind, std::vector<float>(pixel_count(), 0.0f));
}

Band& RasterGrid::add_band_resampled(std::string id, BandKind kind, std::size_t src_width, std::size_t src_height,
                                     std::span<const float> values) {
  return add_band(std::move(id), kind, resample_nearest(values, src_width, src_height, width_, height_));
}

const Band* RasterGrid::find(std::string_view id) const {
  auto it = std::find_if(bands_.begin(), bands_.end(), [&](const Band& b) { return b.id == id; });
  return it == bands_.end() ? nullptr : &*it;
}

Band* RasterGrid::find(std::string_view id) {
  auto it = std::find_if(bands_.begin(), bands_.end(), [&](const Band& b) { return b.id == id; });
  return it == bands_.end() ? nullptr : &*it;
}

const Band& RasterGrid::band(std::string_view id) const {
  if (const Band* b = find(id)) return *b;
  throw Error(Errc::missing_band, fmt::format("missing band {}", id));
}

std::vector<std::string> RasterGrid::band_ids() const {
  std::vector<std::string> ids;
  for (const auto& b : bands_) ids.push_back(b.id);
  return ids;
}

std::size_t RasterGrid::nodata_count() const {
  return static_cast<std::size_t>(std::count(nodata_.begin(), nodata_.end(), std::uint8_t{1}));
}

PlaneView RasterGrid::plane(std::string_view id) const {
  return PlaneView{width_, height_, band(id).values, nodata_};
}

bool bit_equal(const RasterGrid& a, const RasterGrid& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.epsg != b.epsg || !(a.geo == b.geo) ||
      a.storage != b.storage || a.nodata_mask() != b.nodata_mask() || a.bands().size() != b.bands().size()) {
    return false;
  }
  for (std::size_t k = 0; k < a.bands().size(); ++k) {
    const Band& x = a.bands()[k];
    const Band& y = b.bands()[k];
    if (x.id != y.id || x.kind != y.kind) return false;
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
      if (a.is_nodata(i)) continue;
      if (std::bit_cast<std::uint32_t>(x.values[i]) != std::bit_cast<std::uint32_t>(y.values[i])) return false;
    }
  }
  return true;
}

std::vector<float> resample_nearest(std::span<const float> src, std::size_t src_width, std::size_t src_height,
                                    std::size_t dst_width, std::size_t dst_height) {
  if (src.size() != src_width * src_height || src_width == 0 || src_height == 0) {
    throw Error(Errc::dimension, "resample source size does not match its shape");
  }
  std::vector<float> out(dst_width * dst_height);
  for (std::size_t y = 0; y < dst_height; ++y) {
    std::size_t sy = std::min(src_height - 1, (2 * y + 1) * src_height / (2 * dst_height));
    for (std::size_t x = 0; x < dst_width; ++x) {
      std::size_t sx = std::min(src_width - 1, (2 * x + 1) * src_width / (2 * dst_width));
      out[y * dst_width + x] = src[sy * src_width + sx];
    }
  }
  return out;
}

double percentile_sorted(std::span<const float> sorted, double pct) {
  if (sorted.empty()) return 0.0;
  double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) + frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]));
}

}  // namespace nudgex::raster
