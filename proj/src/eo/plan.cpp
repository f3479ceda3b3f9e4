#include "nudgex/eo/plan.hpp"

#include "nudgex/error.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace nudgex::eo {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

double normalize_longitude(double lon) {
  double x = std::fmod(lon + 180.0, 360.0);
  if (x < 0) x += 360.0;
  x -= 180.0;
  return x == -180.0 && lon > 0 ? 180.0 : x;
}

std::vector<BoundingBox> BoundingBox::parts() const {
  if (!crosses_antimeridian()) return {*this};
  BoundingBox a = *this;
  BoundingBox b = *this;
  a.east = 180.0;
  b.west = -180.0;
  return {a, b};
}

double BoundingBox::width_degrees() const { return crosses_antimeridian() ? east + 360.0 - west : east - west; }

bool BoundingBox::intersects(const BoundingBox& other) const {
  if (south > other.north || other.south > north) return false;
  for (const auto& p : parts()) {
    for (const auto& q : other.parts()) {
      if (p.west <= q.east && q.west <= p.east) return true;
    }
  }
  return false;
}

BoundingBox compute_bbox(double latitude, double longitude, double area_km2, double max_latitude) {
  if (!(area_km2 > 0.0)) throw Error(Errc::argument, fmt::format("area {} km^2 must be positive", area_km2));
  if (!(std::abs(latitude) <= 90.0) || !(std::abs(longitude) <= 180.0)) {
    throw Error(Errc::range, fmt::format("coordinates ({}, {}) outside WGS84 ranges", latitude, longitude));
  }
  if (std::abs(latitude) > max_latitude) {
    throw Error(Errc::unsupported_latitude,
                fmt::format("latitude {} beyond +/-{}: longitude scaling degenerates", latitude, max_latitude));
  }
  double half_side_km = std::sqrt(area_km2) / 2.0;
  double dlat = half_side_km / kEarthRadiusKm * kRadToDeg;
  double dlon = dlat / std::cos(latitude * kDegToRad);
  BoundingBox box;
  box.south = latitude - dlat;
  box.north = latitude + dlat;
  box.west = normalize_longitude(longitude - dlon);
  box.east = normalize_longitude(longitude + dlon);
  box.target_area_km2 = area_km2;
  return box;
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  double p1 = lat1 * kDegToRad, p2 = lat2 * kDegToRad;
  double dp = p2 - p1;
  double dl = (lon2 - lon1) * kDegToRad;
  double a = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

double spherical_box_area_km2(const BoundingBox& box) {
  return kEarthRadiusKm * kEarthRadiusKm * box.width_degrees() * kDegToRad *
         (std::sin(box.north * kDegToRad) - std::sin(box.south * kDegToRad));
}

MonthSet MonthSet::all() {
  MonthSet m;
  m.bits_.set();
  return m;
}

MonthSet MonthSet::of(std::initializer_list<int> months) {
  MonthSet m;
  for (int month : months) {
    if (month < 1 || month > 12) throw Error(Errc::argument, fmt::format("month {} outside 1..12", month));
    m.bits_.set(static_cast<std::size_t>(month - 1));
  }
  return m;
}

std::vector<int> MonthSet::months() const {
  std::vector<int> out;
  for (int m = 1; m <= 12; ++m) {
    if (contains(m)) out.push_back(m);
  }
  return out;
}

MonthSet allowed_months(double latitude, double snow_latitude) {
  if (latitude > snow_latitude) return MonthSet::of({5, 6, 7, 8, 9});
  if (latitude < -snow_latitude) return MonthSet::of({11, 12, 1, 2, 3});
  return MonthSet::all();
}

DateWindow clamp_horizon(Date start, Date end, Date horizon_cutoff) {
  if (start > end) {
    throw Error(Errc::argument, fmt::format("window start {} after end {}", format_date(start), format_date(end)));
  }
  if (start > horizon_cutoff) {
    throw Error(Errc::empty_window, fmt::format("window starts {} after the model knowledge horizon {}",
                                                format_date(start), format_date(horizon_cutoff)));
  }
  return DateWindow{start, std::min(end, horizon_cutoff)};
}

void AcquisitionConfig::validate() const {
  if (!(area_km2 > 0)) throw Error(Errc::config, "area_km2 must be positive");
  if (!(max_cloud_fraction >= 0 && max_cloud_fraction <= 1)) {
    throw Error(Errc::config, "max_cloud_fraction must lie in [0,1]");
  }
  if (!(max_latitude > 0 && max_latitude < 90)) throw Error(Errc::config, "max_latitude must lie in (0,90)");
  if (!(snow_latitude >= 0 && snow_latitude <= 90)) throw Error(Errc::config, "snow_latitude must lie in [0,90]");
  if (!date_start.ok() || !date_end.ok() || !horizon_cutoff.ok()) throw Error(Errc::config, "invalid date");
}

bool AcquisitionPlan::admits(Timestamp sensed_at, double cloud_estimate) const {
  Date d = date_of(sensed_at);
  return window.contains(d) && d <= horizon_cutoff && allowed_months.contains(static_cast<int>(static_cast<unsigned>(d.month()))) &&
         cloud_estimate <= max_cloud_fraction;
}

AcquisitionPlan plan_acquisition(const catalog::MiningSite& site, const AcquisitionConfig& config) {
  AcquisitionPlan plan;
  plan.site_id = site.site_id;
  plan.bbox = compute_bbox(site.latitude, site.longitude, config.area_km2, config.max_latitude);
  plan.allowed_months = allowed_months(site.latitude, config.snow_latitude);
  plan.window = clamp_horizon(config.date_start, config.date_end, config.horizon_cutoff);
  plan.max_cloud_fraction = config.max_cloud_fraction;
  plan.horizon_cutoff = config.horizon_cutoff;
  return plan;
}

nlohmann::json to_json(const BoundingBox& b) {
  return {{"west", b.west}, {"south", b.south}, {"east", b.east}, {"north", b.north},
          {"target_area_km2", b.target_area_km2}};
}

nlohmann::json to_json(const AcquisitionPlan& p) {
  return {{"site_id", p.site_id},
          {"bbox", to_json(p.bbox)},
          {"date_start", format_date(p.window.start)},
          {"date_end", format_date(p.window.end)},
          {"max_cloud_fraction", p.max_cloud_fraction},
          {"allowed_months", p.allowed_months.months()},
          {"horizon_cutoff", format_date(p.horizon_cutoff)}};
}

}  // namespace nudgex::eo
