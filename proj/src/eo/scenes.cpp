#include "nudgex/eo/scenes.hpp"

#include "nudgex/error.hpp"
#include "nudgex/raster/geotiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace nudgex::eo {

using nlohmann::json;

QualityReport assess_quality(const raster::RasterGrid& grid, double max_cloud_fraction) {
  QualityReport q;
  q.total_pixels = grid.pixel_count();
  const raster::Band* scl = grid.find("SCL");
  q.from_scl = scl != nullptr;
  const raster::Band* b02 = scl ? nullptr : &grid.band("B02");
  const raster::Band* b03 = scl ? nullptr : &grid.band("B03");
  const raster::Band* red = &grid.band("B04");

  std::vector<float> red_valid;
  red_valid.reserve(grid.pixel_count());
  for (std::size_t i = 0; i < grid.pixel_count(); ++i) {
    if (grid.is_nodata(i)) continue;
    bool cloud;
    if (scl) {
      auto code = static_cast<int>(scl->values[i]);
      if (code == kSclNoData) continue;
      cloud = std::find(kCloudClasses.begin(), kCloudClasses.end(), code) != kCloudClasses.end();
    } else {
      cloud = b02->values[i] > kBrightCloudReflectance && b03->values[i] > kBrightCloudReflectance &&
              red->values[i] > kBrightCloudReflectance;
    }
    ++q.valid_pixels;
    if (cloud) {
      ++q.cloud_pixels;
    } else {
      ++q.clear_pixels;
    }
    if (!std::isnan(red->values[i])) red_valid.push_back(red->values[i]);
  }
  q.valid_fraction = q.total_pixels ? static_cast<double>(q.valid_pixels) / static_cast<double>(q.total_pixels) : 0.0;
  // With nothing valid the scene is treated as fully clouded.
  q.cloud_fraction = q.valid_pixels ? static_cast<double>(q.cloud_pixels) / static_cast<double>(q.valid_pixels) : 1.0;
  std::sort(red_valid.begin(), red_valid.end());
  q.contrast = red_valid.empty() ? 0.0 : raster::percentile_sorted(red_valid, 98.0) - raster::percentile_sorted(red_valid, 2.0);
  q.auto_pass = q.cloud_fraction <= max_cloud_fraction && q.valid_fraction >= kMinValidFraction;
  return q;
}

std::string_view to_string(ReviewState s) {
  switch (s) {
    case ReviewState::pending: return "pending";
    case ReviewState::approved: return "approved";
    case ReviewState::rejected: return "rejected";
  }
  return "pending";
}

ReviewState review_state_from_string(std::string_view s) {
  if (s == "pending") return ReviewState::pending;
  if (s == "approved" || s == "approve") return ReviewState::approved;
  if (s == "rejected" || s == "reject") return ReviewState::rejected;
  throw Error(Errc::argument, fmt::format("unknown review state '{}'", s));
}

json to_json(const QualityReport& q) {
  return {{"cloud_fraction", q.cloud_fraction}, {"valid_fraction", q.valid_fraction}, {"contrast", q.contrast},
          {"auto_pass", q.auto_pass},           {"total_pixels", q.total_pixels},     {"valid_pixels", q.valid_pixels},
          {"cloud_pixels", q.cloud_pixels},     {"clear_pixels", q.clear_pixels},     {"from_scl", q.from_scl}};
}

QualityReport quality_from_json(const json& j) {
  QualityReport q;
  q.cloud_fraction = j.at("cloud_fraction").get<double>();
  q.valid_fraction = j.at("valid_fraction").get<double>();
  q.contrast = j.at("contrast").get<double>();
  q.auto_pass = j.at("auto_pass").get<bool>();
  q.total_pixels = j.value("total_pixels", std::size_t{0});
  q.valid_pixels = j.value("valid_pixels", std::size_t{0});
  q.cloud_pixels = j.value("cloud_pixels", std::size_t{0});
  q.clear_pixels = j.value("clear_pixels", std::size_t{0});
  q.from_scl = j.value("from_scl", true);
  return q;
}

json to_json(const SceneAsset& s) {
  json j{{"scene_id", s.scene_id},
         {"site_id", s.site_id},
         {"sensed_at", format_timestamp(s.sensed_at)},
         {"cloud_estimate", s.cloud_estimate},
         {"bands", s.bands},
         {"resolution_m", s.resolution_m},
         {"raster_ref", s.raster_ref},
         {"quality", to_json(s.quality)},
         {"review_state", to_string(s.review_state)},
         {"reviewer", nullptr},
         {"reviewed_at", nullptr}};
  if (s.reviewer) j["reviewer"] = *s.reviewer;
  if (s.reviewed_at) j["reviewed_at"] = format_timestamp(*s.reviewed_at);
  return j;
}

SceneAsset scene_from_json(const json& j) {
  SceneAsset s;
  s.scene_id = j.at("scene_id").get<std::string>();
  s.site_id = j.at("site_id").get<std::string>();
  s.sensed_at = parse_timestamp(j.at("sensed_at").get<std::string>());
  s.cloud_estimate = j.value("cloud_estimate", 0.0);
  s.bands = j.at("bands").get<std::vector<std::string>>();
  s.resolution_m = j.value("resolution_m", 0.0);
  s.raster_ref = j.at("raster_ref").get<std::string>();
  s.quality = quality_from_json(j.at("quality"));
  s.review_state = review_state_from_string(j.at("review_state").get<std::string>());
  if (j.contains("reviewer") && j["reviewer"].is_string()) s.reviewer = j["reviewer"].get<std::string>();
  if (j.contains("reviewed_at") && j["reviewed_at"].is_string()) {
    s.reviewed_at = parse_timestamp(j["reviewed_at"].get<std::string>());
  }
  return s;
}

bool is_valid_scene_id(std::string_view id) {
  if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  });
}

// ---------------------------------------------------------------- fixture provider

FixtureProvider::FixtureProvider(fs::path manifest) : manifest_(std::move(manifest)) {
  std::size_t n = 0;
  for (const auto& line : read_lines(manifest_)) {
    ++n;
    try {
      json j = json::parse(line);
      Entry e;
      e.candidate.scene_id = j.at("scene_id").get<std::string>();
      e.candidate.sensed_at = parse_timestamp(j.at("sensed_at").get<std::string>());
      e.candidate.cloud_estimate = j.at("cloud_estimate").get<double>();
      e.candidate.source = j.at("raster_path").get<std::string>();
      if (j.contains("bbox")) {
        auto b = j["bbox"].get<std::vector<double>>();
        if (b.size() != 4) throw Error(Errc::format, "bbox must be [west, south, east, north]");
        e.footprint = BoundingBox{b[0], b[1], b[2], b[3], 0.0};
      }
      if (!is_valid_scene_id(e.candidate.scene_id)) {
        throw Error(Errc::format, fmt::format("invalid scene_id '{}'", e.candidate.scene_id));
      }
      entries_.push_back(std::move(e));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& ex) {
      throw Error(Errc::format, fmt::format("{} line {}: {}", manifest_.string(), n, ex.what()));
    }
  }
}

std::vector<SceneCandidate> FixtureProvider::search(const AcquisitionPlan& plan) {
  std::vector<SceneCandidate> out;
  for (const auto& e : entries_) {
    if (e.footprint && !e.footprint->intersects(plan.bbox)) continue;
    out.push_back(e.candidate);
  }
  return out;
}

std::string FixtureProvider::download(const SceneCandidate& candidate, const AcquisitionPlan&) {
  fs::path p = candidate.source;
  if (p.is_relative()) p = manifest_.parent_path() / p;
  return read_file(p);
}

// ---------------------------------------------------------------- openEO provider

OpenEoProvider::OpenEoProvider(OpenEoConfig config, Sleeper sleep) : config_(std::move(config)), sleep_(std::move(sleep)) {}

json OpenEoProvider::search_request(const AcquisitionPlan& plan) const {
  // STAC accepts west > east for boxes crossing the antimeridian.
  const BoundingBox& b = plan.bbox;
  return {{"collections", {config_.collection}},
          {"bbox", {b.west, b.south, b.east, b.north}},
          {"datetime", fmt::format("{}T00:00:00Z/{}T23:59:59Z", format_date(plan.window.start),
                                   format_date(plan.window.end))},
          {"query", {{"eo:cloud_cover", {{"lte", plan.max_cloud_fraction * 100.0}}}}},
          {"limit", 100}};
}

json OpenEoProvider::process_graph(const SceneCandidate& candidate, const AcquisitionPlan& plan) const {
  Date day = date_of(candidate.sensed_at);
  Date next{std::chrono::sys_days{day} + std::chrono::days{1}};
  return {{"process",
           {{"process_graph",
             {{"load",
               {{"process_id", "load_collection"},
                {"arguments",
                 {{"id", config_.collection},
                  {"spatial_extent",
                   {{"west", plan.bbox.west}, {"south", plan.bbox.south}, {"east", plan.bbox.east},
                    {"north", plan.bbox.north}}},
                  {"temporal_extent", {format_date(day), format_date(next)}},
                  {"bands", config_.bands}}}}},
              {"save",
               {{"process_id", "save_result"},
                {"arguments", {{"data", {{"from_node", "load"}}}, {"format", "GTiff"}}},
                {"result", true}}}}}}}};
}

std::vector<SceneCandidate> OpenEoProvider::parse_search_response(const json& body) {
  std::vector<SceneCandidate> out;
  for (const auto& f : body.value("features", json::array())) {
    SceneCandidate c;
    c.scene_id = f.at("id").get<std::string>();
    const json& props = f.at("properties");
    c.sensed_at = parse_timestamp(props.at("datetime").get<std::string>());
    c.cloud_estimate = props.value("eo:cloud_cover", 100.0) / 100.0;
    c.source = c.scene_id;
    if (!is_valid_scene_id(c.scene_id)) continue;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<SceneCandidate> OpenEoProvider::search(const AcquisitionPlan& plan) {
  std::string body = search_request(plan).dump();
  auto res = with_retry(config_.retry, [&] { return http::post(config_.endpoint, "/search", body); }, sleep_);
  if (res.status != 200) throw Error(Errc::io, fmt::format("STAC search returned HTTP {}: {}", res.status, res.body));
  return parse_search_response(json::parse(res.body));
}

std::string OpenEoProvider::download(const SceneCandidate& candidate, const AcquisitionPlan& plan) {
  std::string body = process_graph(candidate, plan).dump();
  auto res = with_retry(config_.retry, [&] { return http::post(config_.endpoint, "/result", body); }, sleep_);
  if (res.status != 200) throw Error(Errc::io, fmt::format("openEO result returned HTTP {}", res.status));
  return res.body;
}

// ---------------------------------------------------------------- store

SceneStore::SceneStore(fs::path data_root, Clock clock) : data_root_(std::move(data_root)), clock_(std::move(clock)) {}

fs::path SceneStore::scene_dir(std::string_view scene_id) const {
  if (!is_valid_scene_id(scene_id)) throw Error(Errc::argument, fmt::format("invalid scene id '{}'", scene_id));
  return data_root_ / "scenes" / std::string(scene_id);
}

bool SceneStore::contains(std::string_view scene_id) const {
  return is_valid_scene_id(scene_id) && fs::exists(scene_dir(scene_id) / "meta.json");
}

SceneAsset SceneStore::get(std::string_view scene_id) const {
  if (!contains(scene_id)) throw Error(Errc::not_found, fmt::format("unknown scene '{}'", scene_id));
  return scene_from_json(json::parse(read_file(scene_dir(scene_id) / "meta.json")));
}

std::vector<SceneAsset> SceneStore::list(std::optional<std::string_view> site_id) const {
  std::vector<SceneAsset> out;
  fs::path root = data_root_ / "scenes";
  if (!fs::exists(root)) return out;
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    SceneAsset s = get(id);
    if (site_id && s.site_id != *site_id) continue;
    out.push_back(std::move(s));
  }
  return out;
}

void SceneStore::write_meta(const SceneAsset& scene) const {
  write_file_atomic(scene_dir(scene.scene_id) / "meta.json", to_json(scene).dump(2) + "\n");
}

SceneAsset SceneStore::add(SceneAsset scene, std::string_view geotiff) {
  std::lock_guard lock(mutex_);
  if (contains(scene.scene_id)) return get(scene.scene_id);
  fs::path dir = scene_dir(scene.scene_id);
  write_file_atomic(dir / "bands.tif", geotiff);
  scene.raster_ref = fmt::format("scenes/{}/bands.tif", scene.scene_id);
  write_meta(scene);
  return scene;
}

SceneAsset SceneStore::review(std::string_view scene_id, ReviewState verdict, std::string_view reviewer) {
  if (verdict == ReviewState::pending) throw Error(Errc::argument, "verdict must be approved or rejected");
  if (trim(reviewer).empty()) throw Error(Errc::argument, "reviewer is required");
  std::lock_guard lock(mutex_);
  SceneAsset scene = get(scene_id);
  if (scene.review_state != ReviewState::pending) {
    throw Error(Errc::conflict,
                fmt::format("scene '{}' already {} by {}", scene_id, to_string(scene.review_state), scene.reviewer.value_or("?")));
  }
  scene.review_state = verdict;
  scene.reviewer = std::string(reviewer);
  scene.reviewed_at = clock_();
  write_meta(scene);
  return scene;
}

raster::RasterGrid SceneStore::load_raster(std::string_view scene_id) const {
  fs::path p = scene_dir(scene_id) / "bands.tif";
  if (!fs::exists(p)) throw Error(Errc::io, fmt::format("raster missing for scene '{}'", scene_id));
  return raster::read_geotiff(read_file(p));
}

std::vector<SceneAsset> fetch_scenes(const AcquisitionPlan& plan, EoProvider& provider, SceneStore& store) {
  std::vector<SceneCandidate> candidates = provider.search(plan);
  std::sort(candidates.begin(), candidates.end(),
            [](const SceneCandidate& a, const SceneCandidate& b) { return a.scene_id < b.scene_id; });
  std::vector<SceneAsset> out;
  for (const auto& c : candidates) {
    if (!plan.admits(c.sensed_at, c.cloud_estimate)) continue;
    if (store.contains(c.scene_id)) {
      out.push_back(store.get(c.scene_id));
      continue;
    }
    std::string bytes = provider.download(c, plan);
    raster::RasterGrid grid = raster::read_geotiff(bytes);
    SceneAsset scene;
    scene.scene_id = c.scene_id;
    scene.site_id = plan.site_id;
    scene.sensed_at = c.sensed_at;
    scene.cloud_estimate = c.cloud_estimate;
    scene.bands = grid.band_ids();
    bool geographic = grid.epsg >= 4000 && grid.epsg < 5000;
    scene.resolution_m = geographic ? grid.geo.pixel_height * std::numbers::pi / 180.0 * kEarthRadiusKm * 1000.0
                                    : grid.geo.pixel_width;
    scene.quality = assess_quality(grid, plan.max_cloud_fraction);
    out.push_back(store.add(std::move(scene), bytes));
  }
  return out;
}

}  // namespace nudgex::eo
