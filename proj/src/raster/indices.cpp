#include "nudgex/raster/indices.hpp"

#include "nudgex/error.hpp"
#include "nudgex/raster/png.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace nudgex::raster {

// ---------------------------------------------------------------- expressions

// Recursive descent:
//   expr   := term (('+'|'-') term)*
//   term   := unary (('*'|'/') unary)*
//   unary  := '-' unary | atom
//   atom   := number | band | '(' expr ')'
class ExpressionParser {
 public:
  explicit ExpressionParser(std::string_view text) : text_(text) {}

  BandExpression run() {
    out_.text_ = std::string(text_);
    expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    if (out_.program_.empty()) fail("empty expression");
    return std::move(out_);
  }

 private:
  [[noreturn]] void fail(std::string_view what) const {
    throw Error(Errc::parse, fmt::format("index expression '{}': {} at column {}", text_, what, pos_ + 1));
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void emit(BandExpression::Op::Kind k) { out_.program_.push_back({k}); }

  void expr() {
    term();
    for (;;) {
      if (eat('+')) {
        term();
        emit(BandExpression::Op::add);
      } else if (eat('-')) {
        term();
        emit(BandExpression::Op::sub);
      } else {
        return;
      }
    }
  }
  void term() {
    unary();
    for (;;) {
      if (eat('*')) {
        unary();
        emit(BandExpression::Op::mul);
      } else if (eat('/')) {
        unary();
        emit(BandExpression::Op::div);
      } else {
        return;
      }
    }
  }
  void unary() {
    if (eat('-')) {
      unary();
      emit(BandExpression::Op::neg);
      return;
    }
    atom();
  }
  void atom() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      expr();
      if (!eat(')')) fail("expected ')'");
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' || text_[pos_] == 'e' ||
              text_[pos_] == 'E' ||
              ((text_[pos_] == '-' || text_[pos_] == '+') && (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E')))) {
        ++pos_;
      }
      std::string lit(text_.substr(start, pos_ - start));
      char* end = nullptr;
      double v = std::strtod(lit.c_str(), &end);
      if (end != lit.c_str() + lit.size()) {
        pos_ = start;
        fail("malformed number");
      }
      out_.program_.push_back({BandExpression::Op::push_const, v});
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      std::string id = canonical_band_id(text_.substr(start, pos_ - start));
      auto known = sentinel2_band_ids();
      if (id == "SCL" || std::find(known.begin(), known.end(), id) == known.end()) {
        pos_ = start;
        fail(fmt::format("unknown band '{}'", text_.substr(start, pos_ - start)));
      }
      auto it = std::find(out_.bands_.begin(), out_.bands_.end(), id);
      std::size_t slot = static_cast<std::size_t>(it - out_.bands_.begin());
      if (it == out_.bands_.end()) out_.bands_.push_back(id);
      out_.program_.push_back({BandExpression::Op::push_band, 0.0, slot});
      return;
    }
    fail(fmt::format("unexpected character '{}'", c));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  BandExpression out_;
};

BandExpression BandExpression::parse(std::string_view text) { return ExpressionParser(text).run(); }

std::optional<double> BandExpression::evaluate(std::span<const double> values) const {
  double stack[64];
  std::size_t sp = 0;
  for (const Op& op : program_) {
    switch (op.kind) {
      case Op::push_const: stack[sp++] = op.constant; break;
      case Op::push_band: stack[sp++] = values[op.band]; break;
      case Op::neg: stack[sp - 1] = -stack[sp - 1]; break;
      default: {
        double b = stack[--sp];
        double& a = stack[sp - 1];
        switch (op.kind) {
          case Op::add: a += b; break;
          case Op::sub: a -= b; break;
          case Op::mul: a *= b; break;
          case Op::div:
            if (b == 0.0) return std::nullopt;
            a /= b;
            break;
          default: break;
        }
      }
    }
    if (sp >= 64) throw Error(Errc::argument, "index expression too deeply nested");
  }
  if (!std::isfinite(stack[0])) return std::nullopt;
  return stack[0];
}

// ---------------------------------------------------------------- registry

const IndexRegistry& IndexRegistry::defaults() {
  static const IndexRegistry registry = [] {
    IndexRegistry r;
    r.add({"NDVI", "(B08 - B04) / (B08 + B04)", -1.0, 1.0, 0.4, "vegetated"});
    r.add({"NDWI", "(B03 - B08) / (B03 + B08)", -1.0, 1.0, 0.2, "water"});
    r.add({"NDBI", "(B11 - B08) / (B11 + B08)", -1.0, 1.0, std::nullopt, ""});
    r.add({"BSI", "((B11 + B04) - (B08 + B02)) / ((B11 + B04) + (B08 + B02))", -1.0, 1.0, 0.1, "bare soil"});
    r.add({"IRONOX", "B04 / B02", 0.0, 10.0, std::nullopt, ""});
    return r;
  }();
  return registry;
}

void IndexRegistry::add(IndexDefinition def) {
  if (def.name.empty()) throw Error(Errc::config, "index name must not be empty");
  if (!(def.lo < def.hi)) throw Error(Errc::config, fmt::format("index {}: valid range must have lo < hi", def.name));
  BandExpression expr = BandExpression::parse(def.expression);
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.def.name == def.name; });
  if (it != entries_.end()) {
    *it = Entry{std::move(def), std::move(expr)};
  } else {
    entries_.push_back(Entry{std::move(def), std::move(expr)});
  }
}

const IndexDefinition& IndexRegistry::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.def.name == name) return e.def;
  }
  throw Error(Errc::unknown_index, fmt::format("unknown index '{}'", name));
}

const BandExpression& IndexRegistry::expression(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.def.name == name) return e.expr;
  }
  throw Error(Errc::unknown_index, fmt::format("unknown index '{}'", name));
}

bool IndexRegistry::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.def.name == name; });
}

std::vector<std::string> IndexRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.def.name);
  return out;
}

// ---------------------------------------------------------------- products

Plane normalized_difference(const PlaneView& a, const PlaneView& b) {
  if (a.width != b.width || a.height != b.height || a.values.size() != b.values.size()) {
    throw Error(Errc::dimension,
                fmt::format("plane shapes differ: {}x{} vs {}x{}", a.width, a.height, b.width, b.height));
  }
  Plane out(a.width, a.height);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    double x = a.values[i];
    double y = b.values[i];
    double sum = x + y;
    if (a.is_nodata(i) || b.is_nodata(i) || std::isnan(x) || std::isnan(y) || sum == 0.0) {
      out.nodata[i] = 1;
      out.values[i] = std::numeric_limits<float>::quiet_NaN();
      continue;
    }
    double v = (x - y) / sum;
    if (!(v >= -1.0 && v <= 1.0)) {
      out.nodata[i] = 1;
      out.values[i] = std::numeric_limits<float>::quiet_NaN();
      continue;
    }
    out.values[i] = static_cast<float>(v);
  }
  return out;
}

IndexStats compute_stats(const Plane& plane, std::span<const double> thresholds) {
  IndexStats s;
  std::size_t n = plane.values.size();
  double sum = 0.0;
  s.min = std::numeric_limits<double>::infinity();
  s.max = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> above(thresholds.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (plane.is_nodata(i)) continue;
    double v = plane.values[i];
    ++s.valid_count;
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (v > thresholds[t]) ++above[t];
    }
  }
  s.valid_fraction = n ? static_cast<double>(s.valid_count) / static_cast<double>(n) : 0.0;
  if (s.valid_count == 0) {
    s.min = s.max = 0.0;
    for (double t : thresholds) s.fraction_above[t] = 0.0;
    return s;
  }
  s.mean = sum / static_cast<double>(s.valid_count);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (plane.is_nodata(i)) continue;
    double d = plane.values[i] - s.mean;
    sq += d * d;
  }
  s.std = std::sqrt(sq / static_cast<double>(s.valid_count));
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    s.fraction_above[thresholds[t]] = static_cast<double>(above[t]) / static_cast<double>(s.valid_count);
  }
  return s;
}

IndexProduct compute_index(const RasterGrid& grid, std::string_view name, const IndexRegistry& registry) {
  const IndexDefinition& def = registry.get(name);
  const BandExpression& expr = registry.expression(name);

  std::vector<const Band*> inputs;
  for (const auto& id : expr.bands()) inputs.push_back(&grid.band(id));

  IndexProduct product;
  product.name = def.name;
  product.lo = def.lo;
  product.hi = def.hi;
  product.threshold = def.threshold;
  product.threshold_label = def.threshold_label;
  product.plane = Plane(grid.width(), grid.height());

  std::size_t out_of_range = 0;
  std::vector<double> values(inputs.size());
  for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
    bool valid = !grid.is_nodata(i);
    for (std::size_t k = 0; k < inputs.size() && valid; ++k) {
      values[k] = inputs[k]->values[i];
      valid = !std::isnan(values[k]);
    }
    std::optional<double> v = valid ? expr.evaluate(values) : std::nullopt;
    if (v && (*v < def.lo || *v > def.hi)) {
      ++out_of_range;
      v.reset();
    }
    if (v) {
      product.plane.values[i] = static_cast<float>(*v);
    } else {
      product.plane.values[i] = std::numeric_limits<float>::quiet_NaN();
      product.plane.nodata[i] = 1;
    }
  }
  std::vector<double> thresholds;
  if (def.threshold) thresholds.push_back(*def.threshold);
  product.stats = compute_stats(product.plane, thresholds);
  product.stats.out_of_range_count = out_of_range;
  return product;
}

namespace {

std::string fixed3(double v) {
  std::string s = fmt::format("{:.3f}", v);
  return s == "-0.000" ? "0.000" : s;
}

}  // namespace

std::string index_summary(const IndexProduct& product) {
  const IndexStats& s = product.stats;
  if (s.valid_count == 0) {
    return fmt::format("{}: no valid pixels in this scene, so the index carries no information.", product.name);
  }
  std::string text = fmt::format("{} mean {}, std {}, min {}, max {}, valid fraction {}", product.name,
                                 fixed3(s.mean), fixed3(s.std), fixed3(s.min), fixed3(s.max),
                                 fixed3(s.valid_fraction));
  if (product.threshold) {
    auto it = s.fraction_above.find(*product.threshold);
    double frac = it == s.fraction_above.end() ? 0.0 : it->second;
    text += fmt::format(", fraction above {} ({}) {}", fixed3(*product.threshold), product.threshold_label,
                        fixed3(frac));
  }
  text += ".";
  return text;
}

std::uint8_t stretch_to_byte(double value, double lo, double hi) {
  if (!(hi > lo) || std::isnan(value)) return 0;
  double t = (value - lo) / (hi - lo) * 255.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 255.0)));
}

std::string render_rgb(const RasterGrid& grid, Stretch stretch) {
  const std::array<const Band*, 3> channels = {&grid.band("B04"), &grid.band("B03"), &grid.band("B02")};
  std::array<double, 3> lo{}, hi{};
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<float> valid;
    valid.reserve(grid.pixel_count());
    for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
      float v = channels[c]->values[i];
      if (!grid.is_nodata(i) && !std::isnan(v)) valid.push_back(v);
    }
    std::sort(valid.begin(), valid.end());
    lo[c] = percentile_sorted(valid, stretch.lo_pct);
    hi[c] = percentile_sorted(valid, stretch.hi_pct);
  }
  std::vector<std::uint8_t> rgb(grid.pixel_count() * 3, 0);
  for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
    if (grid.is_nodata(i)) continue;
    for (std::size_t c = 0; c < 3; ++c) rgb[i * 3 + c] = stretch_to_byte(channels[c]->values[i], lo[c], hi[c]);
  }
  return encode_png_rgb(grid.width(), grid.height(), rgb);
}

std::string render_index_png(const IndexProduct& product) {
  const Plane& p = product.plane;
  std::vector<std::uint8_t> rgb(p.values.size() * 3, 0);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (p.is_nodata(i)) continue;
    std::uint8_t g = stretch_to_byte(p.values[i], product.lo, product.hi);
    rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = g;
  }
  return encode_png_rgb(p.width, p.height, rgb);
}

RasterGrid index_to_grid(const IndexProduct& product, const RasterGrid& like) {
  RasterGrid out(product.plane.width, product.plane.height);
  out.geo = like.geo;
  out.epsg = like.epsg;
  out.storage = SampleType::float32;
  out.add_band(product.name, BandKind::reflectance, product.plane.values);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) out.set_nodata(i, product.plane.is_nodata(i));
  return out;
}

}  // namespace nudgex::raster
