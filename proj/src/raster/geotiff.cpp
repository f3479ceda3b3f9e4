#include "nudgex/raster/geotiff.hpp"

#include "nudgex/error.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include <fmt/format.h>

namespace nudgex::raster {

namespace {

enum Tag : std::uint16_t {
  kImageWidth = 256,
  kImageLength = 257,
  kBitsPerSample = 258,
  kCompression = 259,
  kPhotometric = 262,
  kStripOffsets = 273,
  kSamplesPerPixel = 277,
  kRowsPerStrip = 278,
  kStripByteCounts = 279,
  kPlanarConfig = 284,
  kPredictor = 317,
  kTileWidth = 322,
  kTileLength = 323,
  kTileOffsets = 324,
  kTileByteCounts = 325,
  kExtraSamples = 338,
  kSampleFormat = 339,
  kModelPixelScale = 33550,
  kModelTiepoint = 33922,
  kGeoKeyDirectory = 34735,
  kGdalMetadata = 42112,
  kGdalNodata = 42113,
};

enum FieldType : std::uint16_t {
  kByte = 1,
  kAscii = 2,
  kShort = 3,
  kLong = 4,
  kRational = 5,
  kSByte = 6,
  kUndefined = 7,
  kSShort = 8,
  kSLong = 9,
  kSRational = 10,
  kFloat = 11,
  kDouble = 12,
};

std::size_t type_size(std::uint16_t type) {
  switch (type) {
    case kByte: case kAscii: case kSByte: case kUndefined: return 1;
    case kShort: case kSShort: return 2;
    case kLong: case kSLong: case kFloat: return 4;
    case kRational: case kSRational: case kDouble: return 8;
    default: return 0;
  }
}

constexpr std::uint16_t kGeoKeyModelType = 1024;
constexpr std::uint16_t kGeoKeyRasterType = 1025;
constexpr std::uint16_t kGeoKeyGeographicType = 2048;
constexpr std::uint16_t kGeoKeyProjectedType = 3072;

// ---------------------------------------------------------------- reading

class Cursor {
 public:
  explicit Cursor(std::string_view bytes) : bytes_(bytes) {}

  std::size_t size() const { return bytes_.size(); }

  void require(std::size_t offset, std::size_t len, std::string_view what) const {
    if (offset > bytes_.size() || len > bytes_.size() - offset) {
      throw ParseError(std::min(offset, bytes_.size()), fmt::format("truncated file: {} needs {} bytes", what, len));
    }
  }

  std::uint16_t u16(std::size_t off) const {
    require(off, 2, "u16");
    return static_cast<std::uint16_t>(byte(off) | (byte(off + 1) << 8));
  }
  std::uint32_t u32(std::size_t off) const {
    require(off, 4, "u32");
    return static_cast<std::uint32_t>(byte(off)) | (static_cast<std::uint32_t>(byte(off + 1)) << 8) |
           (static_cast<std::uint32_t>(byte(off + 2)) << 16) | (static_cast<std::uint32_t>(byte(off + 3)) << 24);
  }
  std::uint64_t u64(std::size_t off) const {
    return static_cast<std::uint64_t>(u32(off)) | (static_cast<std::uint64_t>(u32(off + 4)) << 32);
  }
  std::string_view slice(std::size_t off, std::size_t len, std::string_view what) const {
    require(off, len, what);
    return bytes_.substr(off, len);
  }

 private:
  unsigned byte(std::size_t off) const { return static_cast<unsigned char>(bytes_[off]); }
  std::string_view bytes_;
};

struct Field {
  std::uint16_t tag = 0;
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::size_t value_offset = 0;  // where the value bytes live in the file
};

std::vector<double> field_numbers(const Cursor& c, const Field& f) {
  std::vector<double> out;
  out.reserve(f.count);
  std::size_t sz = type_size(f.type);
  for (std::uint32_t i = 0; i < f.count; ++i) {
    std::size_t off = f.value_offset + i * sz;
    switch (f.type) {
      case kByte: case kUndefined: out.push_back(static_cast<unsigned char>(c.slice(off, 1, "byte")[0])); break;
      case kShort: out.push_back(c.u16(off)); break;
      case kSShort: out.push_back(static_cast<std::int16_t>(c.u16(off))); break;
      case kLong: out.push_back(c.u32(off)); break;
      case kSLong: out.push_back(static_cast<std::int32_t>(c.u32(off))); break;
      case kFloat: out.push_back(std::bit_cast<float>(c.u32(off))); break;
      case kDouble: out.push_back(std::bit_cast<double>(c.u64(off))); break;
      case kRational: {
        double den = c.u32(off + 4);
        out.push_back(den == 0 ? 0.0 : c.u32(off) / den);
        break;
      }
      default:
        throw ParseError(f.value_offset, fmt::format("tag {} has unsupported field type {}", f.tag, f.type));
    }
  }
  return out;
}

std::string field_ascii(const Cursor& c, const Field& f) {
  std::string s(c.slice(f.value_offset, f.count, "ascii field"));
  while (!s.empty() && s.back() == '\0') s.pop_back();
  return s;
}

std::string_view compression_name(int code) {
  switch (code) {
    case 2: return "CCITT RLE";
    case 3: return "CCITT G3";
    case 4: return "CCITT G4";
    case 5: return "LZW";
    case 6: return "old-style JPEG";
    case 7: return "JPEG";
    case 32773: return "PackBits";
    case 34887: return "LERC";
    case 34925: return "LZMA";
    case 50000: return "ZSTD";
    case 50001: return "WEBP";
    default: return "unknown";
  }
}

// Pulls `<Item name="DESCRIPTION" sample="N" ...>text</Item>` out of GDAL's
// metadata XML.
std::map<std::size_t, std::string> parse_band_descriptions(std::string_view xml) {
  std::map<std::size_t, std::string> out;
  std::size_t pos = 0;
  while ((pos = xml.find("<Item", pos)) != std::string_view::npos) {
    std::size_t close = xml.find('>', pos);
    std::size_t end = xml.find("</Item>", pos);
    if (close == std::string_view::npos || end == std::string_view::npos || end < close) break;
    std::string_view attrs = xml.substr(pos, close - pos);
    std::string_view text = xml.substr(close + 1, end - close - 1);
    pos = end + 7;
    if (attrs.find("name=\"DESCRIPTION\"") == std::string_view::npos) continue;
    std::size_t s = attrs.find("sample=\"");
    if (s == std::string_view::npos) continue;
    s += 8;
    std::size_t e = attrs.find('"', s);
    if (e == std::string_view::npos) continue;
    try {
      out[std::stoul(std::string(attrs.substr(s, e - s)))] = std::string(text);
    } catch (const std::exception&) {
    }
  }
  return out;
}

std::string inflate_chunk(std::string_view compressed, std::size_t expected, std::size_t file_offset) {
  std::string out(expected, '\0');
  uLongf len = static_cast<uLongf>(expected);
  int rc = ::uncompress(reinterpret_cast<Bytef*>(out.data()), &len, reinterpret_cast<const Bytef*>(compressed.data()),
                        static_cast<uLong>(compressed.size()));
  if (rc != Z_OK || len != expected) {
    throw ParseError(file_offset, fmt::format("DEFLATE chunk failed to decode (zlib rc {}, {} of {} bytes)", rc,
                                              static_cast<std::size_t>(len), expected));
  }
  return out;
}

}  // namespace

RasterGrid read_geotiff(std::string_view bytes) {
  Cursor c(bytes);
  c.require(0, 8, "TIFF header");
  if (bytes.substr(0, 2) == "MM") {
    throw Error(Errc::unsupported_feature, "byte order: big-endian (MM) TIFF is not supported");
  }
  if (bytes.substr(0, 2) != "II") throw ParseError(0, "not a TIFF file (bad byte-order mark)");
  std::uint16_t magic = c.u16(2);
  if (magic == 43) throw Error(Errc::unsupported_feature, "BigTIFF (version 43) is not supported");
  if (magic != 42) throw ParseError(2, fmt::format("bad TIFF version {}", magic));

  std::size_t ifd = c.u32(4);
  std::uint16_t entry_count = c.u16(ifd);
  c.require(ifd + 2, static_cast<std::size_t>(entry_count) * 12, "IFD entries");
  std::map<std::uint16_t, Field> fields;
  for (std::uint16_t i = 0; i < entry_count; ++i) {
    std::size_t e = ifd + 2 + i * 12u;
    Field f;
    f.tag = c.u16(e);
    f.type = c.u16(e + 2);
    f.count = c.u32(e + 4);
    std::size_t sz = type_size(f.type);
    if (sz == 0) continue;  // unknown types are skipped per baseline TIFF
    std::size_t total = sz * f.count;
    f.value_offset = total <= 4 ? e + 8 : c.u32(e + 8);
    c.require(f.value_offset, total, fmt::format("value of tag {}", f.tag));
    fields[f.tag] = f;
  }

  auto get = [&](std::uint16_t tag) -> std::optional<std::vector<double>> {
    auto it = fields.find(tag);
    if (it == fields.end()) return std::nullopt;
    return field_numbers(c, it->second);
  };
  auto require_tag = [&](std::uint16_t tag, std::string_view name) {
    auto v = get(tag);
    if (!v || v->empty()) throw ParseError(ifd, fmt::format("missing required tag {} ({})", name, tag));
    return *v;
  };
  auto scalar = [&](std::uint16_t tag, double fallback) {
    auto v = get(tag);
    return v && !v->empty() ? (*v)[0] : fallback;
  };

  auto width = static_cast<std::size_t>(require_tag(kImageWidth, "ImageWidth")[0]);
  auto height = static_cast<std::size_t>(require_tag(kImageLength, "ImageLength")[0]);
  if (width == 0 || height == 0) throw ParseError(ifd, "image has zero width or height");
  auto spp = static_cast<std::size_t>(scalar(kSamplesPerPixel, 1));
  if (spp == 0) throw ParseError(ifd, "SamplesPerPixel is 0");

  int compression = static_cast<int>(scalar(kCompression, 1));
  if (compression != 1 && compression != 8 && compression != 32946) {
    throw Error(Errc::unsupported_feature,
                fmt::format("Compression={} ({}) is not supported", compression, compression_name(compression)));
  }
  bool deflate = compression != 1;

  auto bits = get(kBitsPerSample).value_or(std::vector<double>{1});
  auto formats = get(kSampleFormat).value_or(std::vector<double>{1});
  for (double b : bits) {
    if (b != bits[0]) throw Error(Errc::unsupported_feature, "BitsPerSample differs between samples");
  }
  for (double f : formats) {
    if (f != formats[0]) throw Error(Errc::unsupported_feature, "SampleFormat differs between samples");
  }
  SampleType sample_type;
  if (bits[0] == 16 && formats[0] == 1) {
    sample_type = SampleType::uint16;
  } else if (bits[0] == 32 && formats[0] == 3) {
    sample_type = SampleType::float32;
  } else {
    throw Error(Errc::unsupported_feature,
                fmt::format("BitsPerSample={} with SampleFormat={} is not supported (uint16 or float32 only)", bits[0],
                            formats[0]));
  }
  std::size_t bytes_per_sample = sample_type == SampleType::uint16 ? 2 : 4;

  int predictor = static_cast<int>(scalar(kPredictor, 1));
  if (predictor != 1 && !(predictor == 2 && sample_type == SampleType::uint16)) {
    throw Error(Errc::unsupported_feature,
                fmt::format("Predictor={} is not supported for this sample type", predictor));
  }
  bool separate = static_cast<int>(scalar(kPlanarConfig, 1)) == 2;

  bool tiled = fields.count(kTileWidth) != 0;
  std::size_t chunk_w, chunk_h, across, down;
  std::vector<double> offsets, counts;
  if (tiled) {
    chunk_w = static_cast<std::size_t>(require_tag(kTileWidth, "TileWidth")[0]);
    chunk_h = static_cast<std::size_t>(require_tag(kTileLength, "TileLength")[0]);
    if (chunk_w == 0 || chunk_h == 0) throw ParseError(ifd, "zero tile size");
    offsets = require_tag(kTileOffsets, "TileOffsets");
    counts = require_tag(kTileByteCounts, "TileByteCounts");
    across = (width + chunk_w - 1) / chunk_w;
    down = (height + chunk_h - 1) / chunk_h;
  } else {
    chunk_w = width;
    chunk_h = std::min<std::size_t>(height, static_cast<std::size_t>(scalar(kRowsPerStrip, 4294967295.0)));
    if (chunk_h == 0) throw ParseError(ifd, "RowsPerStrip is 0");
    offsets = require_tag(kStripOffsets, "StripOffsets");
    counts = require_tag(kStripByteCounts, "StripByteCounts");
    across = 1;
    down = (height + chunk_h - 1) / chunk_h;
  }
  std::size_t planes = separate ? spp : 1;
  std::size_t chunks_per_plane = across * down;
  if (offsets.size() < chunks_per_plane * planes || counts.size() < offsets.size()) {
    throw ParseError(ifd, fmt::format("expected {} chunk offsets, found {}", chunks_per_plane * planes, offsets.size()));
  }

  std::vector<std::vector<double>> raw(spp, std::vector<double>(width * height));
  std::size_t samples_per_pixel_in_chunk = separate ? 1 : spp;
  std::size_t chunk_row_samples = chunk_w * samples_per_pixel_in_chunk;
  if (predictor == 2 && samples_per_pixel_in_chunk > 64) {
    throw Error(Errc::unsupported_feature, "Predictor=2 with more than 64 interleaved samples");
  }

  for (std::size_t plane = 0; plane < planes; ++plane) {
    for (std::size_t ci = 0; ci < chunks_per_plane; ++ci) {
      std::size_t index = plane * chunks_per_plane + ci;
      auto off = static_cast<std::size_t>(offsets[index]);
      auto len = static_cast<std::size_t>(counts[index]);
      std::size_t tx = ci % across;
      std::size_t ty = ci / across;
      std::size_t rows = tiled ? chunk_h : std::min(chunk_h, height - ty * chunk_h);
      std::size_t expected = rows * chunk_row_samples * bytes_per_sample;
      std::string_view stored = c.slice(off, len, fmt::format("chunk {}", index));
      std::string decoded;
      if (deflate) {
        decoded = inflate_chunk(stored, expected, off);
      } else {
        if (stored.size() < expected) throw ParseError(off + stored.size(), fmt::format("chunk {} is short", index));
        decoded.assign(stored.substr(0, expected));
      }
      Cursor d(decoded);

      for (std::size_t r = 0; r < rows; ++r) {
        std::size_t y = ty * chunk_h + r;
        std::uint16_t prev[64] = {};
        for (std::size_t s = 0; s < chunk_row_samples; ++s) {
          std::size_t so = (r * chunk_row_samples + s) * bytes_per_sample;
          double value;
          std::size_t lane = s % samples_per_pixel_in_chunk;
          if (sample_type == SampleType::uint16) {
            std::uint16_t v = d.u16(so);
            if (predictor == 2) {
              if (s >= samples_per_pixel_in_chunk) v = static_cast<std::uint16_t>(v + prev[lane % 64]);
              prev[lane % 64] = v;
            }
            value = v;
          } else {
            value = std::bit_cast<float>(d.u32(so));
          }
          std::size_t x = tx * chunk_w + s / samples_per_pixel_in_chunk;
          if (x >= width || y >= height) continue;  // tile padding
          std::size_t band = separate ? plane : lane;
          raw[band][y * width + x] = value;
        }
      }
    }
  }

  RasterGrid grid(width, height);
  grid.storage = sample_type;

  std::map<std::size_t, std::string> names;
  if (auto it = fields.find(kGdalMetadata); it != fields.end()) {
    names = parse_band_descriptions(field_ascii(c, it->second));
  }
  std::optional<double> nodata;
  bool nodata_nan = false;
  if (auto it = fields.find(kGdalNodata); it != fields.end()) {
    std::string text = field_ascii(c, it->second);
    std::string lower;
    for (char ch : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (lower.find("nan") != std::string::npos) {
      nodata_nan = true;
    } else {
      try {
        nodata = std::stod(text);
      } catch (const std::exception&) {
        throw ParseError(it->second.value_offset, fmt::format("GDAL_NODATA '{}' is not a number", text));
      }
    }
  }
  if (nodata_nan || nodata) {
    for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
      bool all = true;
      for (std::size_t b = 0; b < spp && all; ++b) {
        double v = raw[b][i];
        all = nodata_nan ? std::isnan(v) : v == *nodata;
      }
      grid.set_nodata(i, all);
    }
  }

  for (std::size_t b = 0; b < spp; ++b) {
    std::string id = names.count(b) ? canonical_band_id(names[b]) : fmt::format("band_{}", b + 1);
    BandKind kind = is_class_band(id) ? BandKind::class_code : BandKind::reflectance;
    std::vector<float> values(grid.pixel_count());
    for (std::size_t i = 0; i < values.size(); ++i) {
      double v = raw[b][i];
      if (sample_type == SampleType::uint16 && kind == BandKind::reflectance) {
        values[i] = dn_to_reflectance(static_cast<std::uint16_t>(v));
      } else {
        values[i] = static_cast<float>(v);
      }
    }
    grid.add_band(std::move(id), kind, std::move(values));
  }

  auto scale = get(kModelPixelScale);
  auto tie = get(kModelTiepoint);
  if (scale && tie && scale->size() >= 2 && tie->size() >= 6) {
    grid.geo.pixel_width = (*scale)[0];
    grid.geo.pixel_height = (*scale)[1];
    grid.geo.west = (*tie)[3] - (*tie)[0] * (*scale)[0];
    grid.geo.north = (*tie)[4] + (*tie)[1] * (*scale)[1];
  }
  grid.epsg = 0;
  if (auto keys = get(kGeoKeyDirectory); keys && keys->size() >= 4) {
    auto n = static_cast<std::size_t>((*keys)[3]);
    for (std::size_t k = 0; k < n && 4 + 4 * k + 3 < keys->size(); ++k) {
      auto id = static_cast<std::uint16_t>((*keys)[4 + 4 * k]);
      auto location = static_cast<std::uint16_t>((*keys)[4 + 4 * k + 1]);
      auto value = static_cast<int>((*keys)[4 + 4 * k + 3]);
      if (location == 0 && (id == kGeoKeyGeographicType || id == kGeoKeyProjectedType) && value != 32767) {
        grid.epsg = value;
      }
    }
  }
  return grid;
}

// ---------------------------------------------------------------- writing

namespace {

class Buffer {
 public:
  void u8(std::uint8_t v) { data_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xFF));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v & 0xFFFF));
    u16(static_cast<std::uint16_t>(v >> 16));
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v & 0xFFFFFFFFu));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void bytes(std::string_view b) { data_.append(b); }
  void align2() {
    if (data_.size() % 2) u8(0);
  }
  std::size_t size() const { return data_.size(); }
  std::string& str() { return data_; }

 private:
  std::string data_;
};

struct OutField {
  std::uint16_t tag;
  std::uint16_t type;
  std::uint32_t count;
  std::string payload;  // little-endian value bytes
};

OutField shorts(std::uint16_t tag, const std::vector<std::uint16_t>& v) {
  Buffer b;
  for (auto x : v) b.u16(x);
  return {tag, kShort, static_cast<std::uint32_t>(v.size()), std::move(b.str())};
}
OutField longs(std::uint16_t tag, const std::vector<std::uint32_t>& v) {
  Buffer b;
  for (auto x : v) b.u32(x);
  return {tag, kLong, static_cast<std::uint32_t>(v.size()), std::move(b.str())};
}
OutField doubles(std::uint16_t tag, const std::vector<double>& v) {
  Buffer b;
  for (double x : v) b.u64(std::bit_cast<std::uint64_t>(x));
  return {tag, kDouble, static_cast<std::uint32_t>(v.size()), std::move(b.str())};
}
OutField ascii(std::uint16_t tag, const std::string& s) {
  std::string p = s;
  p.push_back('\0');
  return {tag, kAscii, static_cast<std::uint32_t>(p.size()), std::move(p)};
}

std::string deflate_chunk(std::string_view raw) {
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::string out(bound, '\0');
  int rc = ::compress2(reinterpret_cast<Bytef*>(out.data()), &bound, reinterpret_cast<const Bytef*>(raw.data()),
                       static_cast<uLong>(raw.size()), 6);
  if (rc != Z_OK) throw Error(Errc::io, fmt::format("zlib compress failed ({})", rc));
  out.resize(bound);
  return out;
}

}  // namespace

std::string write_geotiff(const RasterGrid& grid, const GeoTiffWriteOptions& options) {
  const std::size_t w = grid.width();
  const std::size_t h = grid.height();
  const std::size_t spp = grid.bands().size();
  if (spp == 0) throw Error(Errc::argument, "cannot write a grid with no bands");
  if (options.tile_size != 0 && options.tile_size % 16 != 0) {
    throw Error(Errc::argument, "tile size must be a multiple of 16");
  }
  const bool u16 = grid.storage == SampleType::uint16;
  const bool predictor = options.horizontal_predictor && u16 && options.compression == Compression::deflate;
  const std::size_t bps = u16 ? 2 : 4;
  const bool any_nodata = grid.nodata_count() > 0;

  // Encoded samples, band-major.
  std::vector<std::vector<std::uint32_t>> samples(spp, std::vector<std::uint32_t>(w * h));
  for (std::size_t b = 0; b < spp; ++b) {
    const Band& band = grid.bands()[b];
    for (std::size_t i = 0; i < w * h; ++i) {
      if (grid.is_nodata(i)) {
        samples[b][i] = u16 ? 0u : std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
        continue;
      }
      float v = band.values[i];
      if (u16) {
        double scaled = band.kind == BandKind::reflectance ? static_cast<double>(v) * kDnScale : static_cast<double>(v);
        samples[b][i] = static_cast<std::uint32_t>(std::clamp(std::lround(scaled), 0L, 65535L));
      } else {
        samples[b][i] = std::bit_cast<std::uint32_t>(v);
      }
    }
  }

  const bool tiled = options.tile_size != 0;
  const std::size_t lanes = options.interleaved ? spp : 1;
  std::size_t chunk_w = tiled ? options.tile_size : w;
  std::size_t chunk_h;
  if (tiled) {
    chunk_h = options.tile_size;
  } else {
    chunk_h = std::clamp<std::size_t>(65536 / std::max<std::size_t>(1, w * lanes * bps), 1, h);
  }
  std::size_t across = (w + chunk_w - 1) / chunk_w;
  std::size_t down = (h + chunk_h - 1) / chunk_h;
  std::size_t planes = options.interleaved ? 1 : spp;

  std::vector<std::string> chunks;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t ty = 0; ty < down; ++ty) {
      for (std::size_t tx = 0; tx < across; ++tx) {
        std::size_t rows = tiled ? chunk_h : std::min(chunk_h, h - ty * chunk_h);
        Buffer raw;
        for (std::size_t r = 0; r < rows; ++r) {
          std::size_t y = ty * chunk_h + r;
          std::vector<std::uint32_t> prev(lanes, 0);
          for (std::size_t cx = 0; cx < chunk_w; ++cx) {
            std::size_t x = tx * chunk_w + cx;
            for (std::size_t lane = 0; lane < lanes; ++lane) {
              std::size_t band = options.interleaved ? lane : p;
              std::uint32_t v = (x < w && y < h) ? samples[band][y * w + x] : 0u;
              if (u16) {
                std::uint32_t out = v;
                if (predictor) {
                  out = cx == 0 ? v : static_cast<std::uint16_t>(v - prev[lane]);
                  prev[lane] = v;
                }
                raw.u16(static_cast<std::uint16_t>(out));
              } else {
                raw.u32(v);
              }
            }
          }
        }
        chunks.push_back(options.compression == Compression::deflate ? deflate_chunk(raw.str()) : std::move(raw.str()));
      }
    }
  }

  Buffer out;
  out.bytes("II");
  out.u16(42);
  out.u32(0);  // IFD offset, patched below
  std::vector<std::uint32_t> chunk_offsets, chunk_counts;
  for (const auto& chunk : chunks) {
    out.align2();
    chunk_offsets.push_back(static_cast<std::uint32_t>(out.size()));
    chunk_counts.push_back(static_cast<std::uint32_t>(chunk.size()));
    out.bytes(chunk);
  }
  if (out.size() > 0xFFFFFFF0u) throw Error(Errc::argument, "grid too large for classic TIFF");

  std::vector<OutField> fields;
  fields.push_back(longs(kImageWidth, {static_cast<std::uint32_t>(w)}));
  fields.push_back(longs(kImageLength, {static_cast<std::uint32_t>(h)}));
  fields.push_back(shorts(kBitsPerSample, std::vector<std::uint16_t>(spp, static_cast<std::uint16_t>(bps * 8))));
  fields.push_back(shorts(kCompression, {static_cast<std::uint16_t>(options.compression == Compression::deflate ? 8 : 1)}));
  fields.push_back(shorts(kPhotometric, {1}));
  if (!tiled) fields.push_back(longs(kStripOffsets, chunk_offsets));
  fields.push_back(shorts(kSamplesPerPixel, {static_cast<std::uint16_t>(spp)}));
  if (!tiled) {
    fields.push_back(longs(kRowsPerStrip, {static_cast<std::uint32_t>(chunk_h)}));
    fields.push_back(longs(kStripByteCounts, chunk_counts));
  }
  fields.push_back(shorts(kPlanarConfig, {static_cast<std::uint16_t>(options.interleaved ? 1 : 2)}));
  if (predictor) fields.push_back(shorts(kPredictor, {2}));
  if (tiled) {
    fields.push_back(longs(kTileWidth, {static_cast<std::uint32_t>(chunk_w)}));
    fields.push_back(longs(kTileLength, {static_cast<std::uint32_t>(chunk_h)}));
    fields.push_back(longs(kTileOffsets, chunk_offsets));
    fields.push_back(longs(kTileByteCounts, chunk_counts));
  }
  if (spp > 1) fields.push_back(shorts(kExtraSamples, std::vector<std::uint16_t>(spp - 1, 0)));
  fields.push_back(shorts(kSampleFormat, std::vector<std::uint16_t>(spp, static_cast<std::uint16_t>(u16 ? 1 : 3))));
  fields.push_back(doubles(kModelPixelScale, {grid.geo.pixel_width, grid.geo.pixel_height, 0.0}));
  fields.push_back(doubles(kModelTiepoint, {0.0, 0.0, 0.0, grid.geo.west, grid.geo.north, 0.0}));
  {
    std::vector<std::uint16_t> keys = {1, 1, 0, 0};
    auto add_key = [&](std::uint16_t id, std::uint16_t value) {
      keys.insert(keys.end(), {id, 0, 1, value});
      ++keys[3];
    };
    bool geographic = grid.epsg >= 4000 && grid.epsg < 5000;
    if (grid.epsg > 0) add_key(kGeoKeyModelType, geographic ? 2 : 1);
    add_key(kGeoKeyRasterType, 1);
    if (grid.epsg > 0) add_key(geographic ? kGeoKeyGeographicType : kGeoKeyProjectedType, static_cast<std::uint16_t>(grid.epsg));
    fields.push_back(shorts(kGeoKeyDirectory, keys));
  }
  {
    std::string xml = "<GDALMetadata>\n";
    for (std::size_t b = 0; b < spp; ++b) {
      xml += fmt::format("  <Item name=\"DESCRIPTION\" sample=\"{}\" role=\"description\">{}</Item>\n", b,
                         grid.bands()[b].id);
    }
    xml += "</GDALMetadata>";
    fields.push_back(ascii(kGdalMetadata, xml));
  }
  if (any_nodata) fields.push_back(ascii(kGdalNodata, u16 ? "0" : "nan"));

  std::sort(fields.begin(), fields.end(), [](const OutField& a, const OutField& b) { return a.tag < b.tag; });

  out.align2();
  const std::size_t ifd_offset = out.size();
  const std::size_t ifd_size = 2 + 12 * fields.size() + 4;
  std::size_t extra = ifd_offset + ifd_size;
  Buffer ifd;
  Buffer tail;
  ifd.u16(static_cast<std::uint16_t>(fields.size()));
  for (const auto& f : fields) {
    ifd.u16(f.tag);
    ifd.u16(f.type);
    ifd.u32(f.count);
    if (f.payload.size() <= 4) {
      std::string inline_value = f.payload;
      inline_value.resize(4, '\0');
      ifd.bytes(inline_value);
    } else {
      tail.align2();
      ifd.u32(static_cast<std::uint32_t>(extra + tail.size()));
      tail.bytes(f.payload);
    }
  }
  ifd.u32(0);
  out.bytes(ifd.str());
  out.bytes(tail.str());

  std::string& bytes = out.str();
  for (int i = 0; i < 4; ++i) bytes[4 + i] = static_cast<char>((ifd_offset >> (8 * i)) & 0xFF);
  return std::move(bytes);
}

}  // namespace nudgex::raster
