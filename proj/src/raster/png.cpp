#include "nudgex/raster/png.hpp"

#include "nudgex/error.hpp"

#include <zlib.h>

#include <cstdlib>

#include <fmt/format.h>

namespace nudgex::raster {

namespace {

constexpr std::string_view kSignature{"\x89PNG\r\n\x1a\n", 8};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v >> 24));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

std::uint32_t get_u32(std::string_view s, std::size_t off) {
  if (off + 4 > s.size()) throw ParseError(s.size(), "truncated PNG");
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])); };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

void put_chunk(std::string& out, std::string_view type, std::string_view data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type);
  body.append(data);
  out.append(body);
  uLong crc = ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace

std::string encode_png_rgb(std::size_t width, std::size_t height, std::span<const std::uint8_t> rgb) {
  if (width == 0 || height == 0 || rgb.size() != width * height * 3) {
    throw Error(Errc::dimension, "RGB buffer does not match image size");
  }
  std::string raw;
  raw.reserve(height * (width * 3 + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back('\0');
    raw.append(reinterpret_cast<const char*>(rgb.data() + y * width * 3), width * 3);
  }
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::string z(bound, '\0');
  if (::compress2(reinterpret_cast<Bytef*>(z.data()), &bound, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw Error(Errc::io, "zlib compress failed");
  }
  z.resize(bound);

  std::string out(kSignature);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr += std::string_view("\x08\x02\x00\x00\x00", 5);  // depth 8, truecolour, deflate, filter 0, no interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", "");
  return out;
}

DecodedPng decode_png_rgb(std::string_view bytes) {
  if (bytes.substr(0, 8) != kSignature) throw ParseError(0, "not a PNG file");
  DecodedPng img;
  std::string idat;
  std::size_t off = 8;
  bool seen_end = false;
  while (off + 8 <= bytes.size() && !seen_end) {
    std::uint32_t len = get_u32(bytes, off);
    std::string_view type = bytes.substr(off + 4, 4);
    if (off + 12 + len > bytes.size()) throw ParseError(off, "truncated PNG chunk");
    std::string_view data = bytes.substr(off + 8, len);
    if (type == "IHDR") {
      img.width = get_u32(data, 0);
      img.height = get_u32(data, 4);
      if (data.size() < 13 || data[8] != 8 || data[9] != 2 || data[12] != 0) {
        throw Error(Errc::unsupported_feature, "only 8-bit non-interlaced RGB PNG is supported");
      }
    } else if (type == "IDAT") {
      idat.append(data);
    } else if (type == "IEND") {
      seen_end = true;
    }
    off += 12 + len;
  }
  if (img.width == 0 || !seen_end) throw ParseError(off, "PNG missing IHDR or IEND");

  std::size_t stride = img.width * 3;
  std::string raw(img.height * (stride + 1), '\0');
  uLongf len = static_cast<uLongf>(raw.size());
  if (::uncompress(reinterpret_cast<Bytef*>(raw.data()), &len, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
      len != raw.size()) {
    throw ParseError(8, "PNG image data failed to inflate");
  }
  img.rgb.resize(img.height * stride);
  for (std::size_t y = 0; y < img.height; ++y) {
    auto filter = static_cast<unsigned char>(raw[y * (stride + 1)]);
    const auto* in = reinterpret_cast<const std::uint8_t*>(raw.data() + y * (stride + 1) + 1);
    std::uint8_t* row = img.rgb.data() + y * stride;
    const std::uint8_t* up = y ? row - stride : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      int a = x >= 3 ? row[x - 3] : 0;
      int b = up ? up[x] : 0;
      int c = (up && x >= 3) ? up[x - 3] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = paeth(a, b, c); break;
        default: throw ParseError(y, fmt::format("bad PNG filter {}", filter));
      }
      row[x] = static_cast<std::uint8_t>(in[x] + pred);
    }
  }
  return img;
}

}  // namespace nudgex::raster
