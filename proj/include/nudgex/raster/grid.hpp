#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nudgex::raster {

enum class BandKind : std::uint8_t {
  reflectance,  // unitless, nominally [0,1]
  class_code,   // integral codes (SCL), held exactly in float
};

/// On-disk sample type. TIFF needs one sample layout for every band, so this
/// is a property of the whole grid.
enum class SampleType : std::uint8_t { float32, uint16 };

/// North-up affine placement: (west, north) is the outer corner of pixel
/// (0,0); pixel sizes are positive, in CRS units per pixel.
struct GeoTransform {
  double west = 0.0;
  double north = 0.0;
  double pixel_width = 1.0;
  double pixel_height = 1.0;

  friend bool operator==(const GeoTransform&, const GeoTransform&) = default;
};

struct Band {
  std::string id;
  BandKind kind = BandKind::reflectance;
  std::vector<float> values;
};

inline constexpr float kDnScale = 10000.0f;

/// Sentinel-2 L2A digital number to reflectance.
inline float dn_to_reflectance(std::uint16_t dn) { return static_cast<float>(dn) / kDnScale; }

/// True for band ids that carry class codes rather than reflectance.
bool is_class_band(std::string_view id);

/// Canonical Sentinel-2 id for `id` ("B4" -> "B04", "b8a" -> "B8A"); returns
/// `id` unchanged if it is not a recognised band name.
std::string canonical_band_id(std::string_view id);

/// The 13 spectral bands plus SCL.
std::span<const std::string_view> sentinel2_band_ids();

struct PlaneView {
  std::size_t width = 0;
  std::size_t height = 0;
  std::span<const float> values;
  std::span<const std::uint8_t> nodata;  // empty = all valid

  bool is_nodata(std::size_t i) const { return !nodata.empty() && nodata[i] != 0; }
};

struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> nodata;

  Plane() = default;
  Plane(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0.0f), nodata(w * h, 0) {}

  PlaneView view() const { return {width, height, values, nodata}; }
  bool is_nodata(std::size_t i) const { return nodata[i] != 0; }
};

class RasterGrid {
 public:
  RasterGrid() = default;
  RasterGrid(std::size_t width, std::size_t height);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t pixel_count() const { return width_ * height_; }

  /// Adds a band; throws dimension error on size mismatch and argument error
  /// on a duplicate id.
  Band& add_band(std::string id, BandKind kind, std::vector<float> values);
  Band& add_band(std::string id, BandKind kind);

  /// Adds a band sampled on a coarser grid (e.g. 20 m / 60 m bands),
  /// nearest-neighbour upsampled onto this grid.
  Band& add_band_resampled(std::string id, BandKind kind, std::size_t src_width, std::size_t src_height,
                           std::span<const float> values);

  bool has_band(std::string_view id) const { return find(id) != nullptr; }
  const Band* find(std::string_view id) const;
  Band* find(std::string_view id);
  /// Throws missing_band naming `id`.
  const Band& band(std::string_view id) const;
  const std::vector<Band>& bands() const { return bands_; }
  std::vector<std::string> band_ids() const;

  bool is_nodata(std::size_t i) const { return nodata_[i] != 0; }
  void set_nodata(std::size_t i, bool v) { nodata_[i] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& nodata_mask() const { return nodata_; }
  std::size_t nodata_count() const;

  PlaneView plane(std::string_view id) const;

  GeoTransform geo;
  int epsg = 4326;
  SampleType storage = SampleType::float32;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<Band> bands_;
  std::vector<std::uint8_t> nodata_;
};

/// Same shape, metadata, band ids/kinds, and mask; values bit-identical at
/// every valid pixel.
bool bit_equal(const RasterGrid& a, const RasterGrid& b);

/// Nearest-neighbour resample of a row-major plane.
std::vector<float> resample_nearest(std::span<const float> src, std::size_t src_width, std::size_t src_height,
                                    std::size_t dst_width, std::size_t dst_height);

/// Linear-interpolated percentile (0..100) over ascending-sorted values.
double percentile_sorted(std::span<const float> sorted, double pct);

}  // namespace nudgex::raster
