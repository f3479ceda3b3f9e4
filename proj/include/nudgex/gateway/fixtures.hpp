#pragma once

#include "nudgex/catalog.hpp"
#include "nudgex/raster/grid.hpp"
#include "nudgex/util.hpp"

#include <string>
#include <vector>

namespace nudgex::gateway::fixtures {

/// A demo site with everything the offline pipeline needs.
struct DemoSite {
  catalog::MiningSite site;
  std::string dossier_markdown;
  std::string caption;  // what the stub captioner returns
};

/// Three Australian sites, Thompson Mine, and four non-Australian
/// distractors, ordered by site_id.
const std::vector<DemoSite>& demo_sites();
const DemoSite& demo_site(std::string_view site_id);

/// The three Australian site ids.
std::vector<std::string> australian_site_ids();

enum class SceneKind {
  clear,         // inside every constraint
  cloudy,        // high cloud estimate and SCL cloud
  post_horizon,  // sensed after the knowledge horizon
  snow_season,   // outside the allowed months (|lat| > 35 only)
};

/// Synthetic 7-band + SCL uint16 scene over the site's 100 km^2 box: a bare
/// pit, a tailings pond and vegetation, plus cloud for SceneKind::cloudy.
raster::RasterGrid synthetic_scene(const catalog::MiningSite& site, SceneKind kind, std::size_t size = 64);

struct FixtureOptions {
  std::vector<std::string> site_ids;  // empty = all demo sites
  std::size_t raster_size = 64;
  std::string fixed_time = "2025-01-15T12:00:00Z";
};

struct FixturePaths {
  fs::path root;
  fs::path sites_csv;
  fs::path dossiers;
  fs::path manifest;
  fs::path captions;
  fs::path config;
  fs::path data_root;
};

/// Writes sites.csv, dossiers/<id>.md, scenes/manifest.jsonl + GeoTIFFs,
/// captions.json and config.toml (stub providers, data root "data").
FixturePaths write_fixtures(const fs::path& dir, const FixtureOptions& options = {});

/// Scene id the fixture uses for a site and kind.
std::string fixture_scene_id(const catalog::MiningSite& site, SceneKind kind);

}  // namespace nudgex::gateway::fixtures
