#pragma once

#include "nudgex/eo/plan.hpp"
#include "nudgex/http.hpp"
#include "nudgex/raster/grid.hpp"
#include "nudgex/retry.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nudgex::eo {

/// SCL classes counted as cloud: medium/high probability cloud, thin cirrus.
inline constexpr std::array<int, 3> kCloudClasses = {8, 9, 10};
inline constexpr int kSclNoData = 0;
inline constexpr double kMinValidFraction = 0.95;
/// Without SCL a pixel is cloud when B02, B03 and B04 all exceed this.
inline constexpr double kBrightCloudReflectance = 0.30;

struct QualityReport {
  double cloud_fraction = 0.0;
  double valid_fraction = 0.0;
  double contrast = 0.0;
  bool auto_pass = false;
  std::size_t total_pixels = 0;
  std::size_t valid_pixels = 0;
  std::size_t cloud_pixels = 0;
  std::size_t clear_pixels = 0;
  bool from_scl = true;
};

/// cloud_fraction is taken over valid pixels, so cloud + clear == valid.
QualityReport assess_quality(const raster::RasterGrid& grid, double max_cloud_fraction);

enum class ReviewState { pending, approved, rejected };
std::string_view to_string(ReviewState s);
ReviewState review_state_from_string(std::string_view s);

struct SceneAsset {
  std::string scene_id;
  std::string site_id;
  Timestamp sensed_at{};
  double cloud_estimate = 0.0;
  std::vector<std::string> bands;
  double resolution_m = 0.0;
  std::string raster_ref;  // relative to the data root
  QualityReport quality;
  ReviewState review_state = ReviewState::pending;
  std::optional<std::string> reviewer;
  std::optional<Timestamp> reviewed_at;
};

nlohmann::json to_json(const QualityReport& q);
QualityReport quality_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneAsset& s);
SceneAsset scene_from_json(const nlohmann::json& j);

bool is_valid_scene_id(std::string_view id);

/// What a provider search returns before anything is downloaded.
struct SceneCandidate {
  std::string scene_id;
  Timestamp sensed_at{};
  double cloud_estimate = 0.0;  // fraction in [0,1]
  std::string source;           // provider-specific locator
};

class EoProvider {
 public:
  virtual ~EoProvider() = default;
  /// Candidate scenes near the plan's box. Providers may return scenes that
  /// violate the plan; fetch_scenes filters.
  virtual std::vector<SceneCandidate> search(const AcquisitionPlan& plan) = 0;
  /// GeoTIFF bytes for the candidate.
  virtual std::string download(const SceneCandidate& candidate, const AcquisitionPlan& plan) = 0;
};

/// Local manifest: JSONL of {scene_id, sensed_at, cloud_estimate,
/// raster_path} plus an optional "bbox": [w,s,e,n] footprint; entries
/// without a footprint match every plan. raster_path is relative to the
/// manifest's directory.
class FixtureProvider : public EoProvider {
 public:
  explicit FixtureProvider(fs::path manifest);

  std::vector<SceneCandidate> search(const AcquisitionPlan& plan) override;
  std::string download(const SceneCandidate& candidate, const AcquisitionPlan& plan) override;

 private:
  struct Entry {
    SceneCandidate candidate;
    std::optional<BoundingBox> footprint;
  };
  fs::path manifest_;
  std::vector<Entry> entries_;
};

struct OpenEoConfig {
  http::Endpoint endpoint;  // token from NUDGEX_EO_TOKEN
  std::string collection = "SENTINEL2_L2A";
  std::vector<std::string> bands = {"B02", "B03", "B04", "B08", "B11", "B12", "SCL"};
  RetryPolicy retry;
};

/// Live client: STAC item search for candidates, then an openEO
/// load_collection -> save_result(GTiff) process graph per scene.
class OpenEoProvider : public EoProvider {
 public:
  explicit OpenEoProvider(OpenEoConfig config, Sleeper sleep = thread_sleeper());

  std::vector<SceneCandidate> search(const AcquisitionPlan& plan) override;
  std::string download(const SceneCandidate& candidate, const AcquisitionPlan& plan) override;

  nlohmann::json search_request(const AcquisitionPlan& plan) const;
  nlohmann::json process_graph(const SceneCandidate& candidate, const AcquisitionPlan& plan) const;
  static std::vector<SceneCandidate> parse_search_response(const nlohmann::json& body);

 private:
  OpenEoConfig config_;
  Sleeper sleep_;
};

/// `<root>/<scene_id>/bands.tif` + `<root>/<scene_id>/meta.json`.
class SceneStore {
 public:
  SceneStore(fs::path data_root, Clock clock = system_clock());

  bool contains(std::string_view scene_id) const;
  SceneAsset get(std::string_view scene_id) const;  // throws not_found
  std::vector<SceneAsset> list(std::optional<std::string_view> site_id = std::nullopt) const;

  /// Stores a new scene; returns the stored asset unchanged if the id
  /// already exists.
  SceneAsset add(SceneAsset scene, std::string_view geotiff);

  /// pending -> approved|rejected exactly once; conflict otherwise.
  SceneAsset review(std::string_view scene_id, ReviewState verdict, std::string_view reviewer);

  raster::RasterGrid load_raster(std::string_view scene_id) const;
  fs::path scene_dir(std::string_view scene_id) const;

 private:
  void write_meta(const SceneAsset& scene) const;

  fs::path data_root_;
  Clock clock_;
  mutable std::mutex mutex_;
};

/// Searches, filters by the plan, downloads and stores admitted scenes
/// (pending review, quality assessed). Scenes already stored are returned
/// as stored.
std::vector<SceneAsset> fetch_scenes(const AcquisitionPlan& plan, EoProvider& provider, SceneStore& store);

}  // namespace nudgex::eo
