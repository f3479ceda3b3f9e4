#pragma once

#include "nudgex/catalog.hpp"
#include "nudgex/util.hpp"

#include <bitset>
#include <string>
#include <vector>

namespace nudgex::eo {

inline constexpr double kEarthRadiusKm = 6371.0088;
inline constexpr double kDefaultAreaKm2 = 100.0;
inline constexpr double kDefaultMaxLatitude = 66.0;
inline constexpr double kDefaultSnowLatitude = 35.0;
inline constexpr double kDefaultMaxCloudFraction = 0.10;

/// Lat/lon box. When the box crosses the antimeridian `west > east`; use
/// parts() to get the two non-wrapping halves.
struct BoundingBox {
  double west = 0.0;
  double south = 0.0;
  double east = 0.0;
  double north = 0.0;
  double target_area_km2 = kDefaultAreaKm2;

  bool crosses_antimeridian() const { return west > east; }
  /// One box, or two boxes split at +/-180, each with west < east.
  std::vector<BoundingBox> parts() const;
  double width_degrees() const;
  double center_latitude() const { return 0.5 * (south + north); }
  bool intersects(const BoundingBox& other) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Square of area `area_km2` centred on the point on a sphere of radius
/// kEarthRadiusKm. Throws unsupported_latitude beyond `max_latitude`.
BoundingBox compute_bbox(double latitude, double longitude, double area_km2 = kDefaultAreaKm2,
                         double max_latitude = kDefaultMaxLatitude);

/// Great-circle distance in km.
double haversine_km(double lat1, double lon1, double lat2, double lon2);

/// Exact spherical area of a lat/lon box in km^2.
double spherical_box_area_km2(const BoundingBox& box);

double normalize_longitude(double lon);

class MonthSet {
 public:
  MonthSet() = default;
  static MonthSet all();
  static MonthSet of(std::initializer_list<int> months);

  bool contains(int month) const { return month >= 1 && month <= 12 && bits_[month - 1]; }
  bool empty() const { return bits_.none(); }
  std::size_t size() const { return bits_.count(); }
  std::vector<int> months() const;  // ascending

  friend bool operator==(const MonthSet&, const MonthSet&) = default;

 private:
  std::bitset<12> bits_;
};

/// Snow-free acquisition months for the latitude.
MonthSet allowed_months(double latitude, double snow_latitude = kDefaultSnowLatitude);

struct DateWindow {
  Date start;
  Date end;

  bool contains(Date d) const { return start <= d && d <= end; }
  friend bool operator==(const DateWindow&, const DateWindow&) = default;
};

/// end := min(end, cutoff). Throws argument error when start > end and
/// empty_window when start > cutoff.
DateWindow clamp_horizon(Date start, Date end, Date horizon_cutoff);

struct AcquisitionConfig {
  double area_km2 = kDefaultAreaKm2;
  double max_cloud_fraction = kDefaultMaxCloudFraction;
  Date date_start = Date{std::chrono::year{2024}, std::chrono::January, std::chrono::day{1}};
  Date date_end = Date{std::chrono::year{2024}, std::chrono::December, std::chrono::day{31}};
  Date horizon_cutoff = Date{std::chrono::year{2024}, std::chrono::December, std::chrono::day{31}};
  double snow_latitude = kDefaultSnowLatitude;
  double max_latitude = kDefaultMaxLatitude;

  void validate() const;
};

struct AcquisitionPlan {
  std::string site_id;
  BoundingBox bbox;
  DateWindow window;
  double max_cloud_fraction = kDefaultMaxCloudFraction;
  MonthSet allowed_months;
  Date horizon_cutoff;

  /// True when a scene sensed at `t` with the given cloud estimate satisfies
  /// every constraint of the plan.
  bool admits(Timestamp sensed_at, double cloud_estimate) const;
};

AcquisitionPlan plan_acquisition(const catalog::MiningSite& site, const AcquisitionConfig& config);

nlohmann::json to_json(const BoundingBox& box);
nlohmann::json to_json(const AcquisitionPlan& plan);

}  // namespace nudgex::eo
