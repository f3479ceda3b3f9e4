#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nudgex::raster {

/// 8-bit RGB PNG, no alpha, filter 0, fixed zlib level: identical input
/// gives identical bytes.
std::string encode_png_rgb(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb);

struct DecodedPng {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Decodes the 8-bit RGB non-interlaced PNGs this library writes (all five
/// filter types accepted). Used for verification and by tests.
DecodedPng decode_png_rgb(std::string_view bytes);

}  // namespace nudgex::raster
