#pragma once

#include "nudgex/raster/grid.hpp"

#include <cstddef>
#include <string>
#include <string_view>

namespace nudgex::raster {

// Supported subset: classic little-endian TIFF, striped or tiled, chunky or
// planar-separate, uncompressed or DEFLATE (optionally with horizontal
// predictor on uint16), uint16 or float32 samples. Band names travel in the
// GDAL_METADATA tag, the nodata sentinel in GDAL_NODATA.

enum class Compression { none, deflate };

struct GeoTiffWriteOptions {
  Compression compression = Compression::none;
  bool horizontal_predictor = false;  // uint16 + deflate only
  std::size_t tile_size = 0;          // 0 = strips; otherwise a multiple of 16
  bool interleaved = false;           // chunky (pixel-interleaved) instead of band-separate
};

/// Throws ParseError (with byte offset) on malformed input and
/// Error(unsupported_feature) naming the offending tag.
RasterGrid read_geotiff(std::string_view bytes);

std::string write_geotiff(const RasterGrid& grid, const GeoTiffWriteOptions& options = {});

}  // namespace nudgex::raster
