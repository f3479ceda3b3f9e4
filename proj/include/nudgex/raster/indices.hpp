#pragma once

#include "nudgex/raster/grid.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nudgex::raster {

/// Compiled band-arithmetic expression over {B01..B12, B8A}: + - * /,
/// parentheses, unary minus and numeric literals. Any nodata operand or a
/// division by zero makes the pixel nodata.
class BandExpression {
 public:
  /// Throws Error(parse) with the column of the offending token.
  static BandExpression parse(std::string_view text);

  const std::string& text() const { return text_; }
  /// Band ids referenced, in first-use order.
  const std::vector<std::string>& bands() const { return bands_; }

  /// nullopt = nodata. `values` is indexed like bands().
  std::optional<double> evaluate(std::span<const double> values) const;

 private:
  struct Op {
    enum Kind { push_const, push_band, add, sub, mul, div, neg } kind;
    double constant = 0.0;
    std::size_t band = 0;
  };
  std::string text_;
  std::vector<std::string> bands_;
  std::vector<Op> program_;  // postfix

  friend class ExpressionParser;
};

struct IndexDefinition {
  std::string name;
  std::string expression;
  double lo = -1.0;
  double hi = 1.0;
  std::optional<double> threshold;  // "fraction above" reported in summaries
  std::string threshold_label;
};

class IndexRegistry {
 public:
  /// NDVI, NDWI, NDBI, BSI, IRONOX.
  static const IndexRegistry& defaults();

  /// Validates the expression; replaces an existing entry of the same name.
  void add(IndexDefinition def);
  const IndexDefinition& get(std::string_view name) const;  // throws unknown_index
  const BandExpression& expression(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  struct Entry {
    IndexDefinition def;
    BandExpression expr;
  };
  std::vector<Entry> entries_;
};

struct IndexStats {
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
  double valid_fraction = 0.0;
  std::size_t valid_count = 0;
  std::size_t out_of_range_count = 0;
  std::map<double, double> fraction_above;
};

struct IndexProduct {
  std::string name;
  Plane plane;
  double lo = -1.0;
  double hi = 1.0;
  IndexStats stats;
  std::optional<double> threshold;
  std::string threshold_label;
};

/// (a-b)/(a+b) per pixel; nodata where either input is nodata or a+b == 0.
Plane normalized_difference(const PlaneView& a, const PlaneView& b);

IndexProduct compute_index(const RasterGrid& grid, std::string_view name,
                           const IndexRegistry& registry = IndexRegistry::defaults());

/// Mean/std/min/max/valid_fraction over valid pixels plus the fraction above
/// each threshold.
IndexStats compute_stats(const Plane& plane, std::span<const double> thresholds);

/// One deterministic paragraph describing the product for a prompt.
std::string index_summary(const IndexProduct& product);

struct Stretch {
  double lo_pct = 2.0;
  double hi_pct = 98.0;
};

/// True-colour (B04, B03, B02) PNG with a per-band percentile stretch over
/// valid pixels; nodata is black.
std::string render_rgb(const RasterGrid& grid, Stretch stretch = {});

/// Maps `value` into 0..255 for a [lo,hi] stretch; degenerate stretch -> 0.
std::uint8_t stretch_to_byte(double value, double lo, double hi);

/// Greyscale-ramp PNG of an index over its valid range; nodata is black.
std::string render_index_png(const IndexProduct& product);

/// Single-band float32 grid of the product, placed like `like`.
RasterGrid index_to_grid(const IndexProduct& product, const RasterGrid& like);

}  // namespace nudgex::raster
