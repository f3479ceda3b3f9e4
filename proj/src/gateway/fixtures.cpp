#include "nudgex/gateway/fixtures.hpp"

#include "nudgex/eo/plan.hpp"
#include "nudgex/error.hpp"
#include "nudgex/raster/geotiff.hpp"
#include "nudgex/rag/ragstore.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace nudgex::gateway::fixtures {

using nlohmann::json;

namespace {

DemoSite make(std::string id, std::string name, double lat, double lon, std::string country,
              std::vector<std::string> commodities, std::string geology, std::string history, std::string controversies,
              std::string caption) {
  DemoSite d;
  d.site.site_id = std::move(id);
  d.site.name = std::move(name);
  d.site.latitude = lat;
  d.site.longitude = lon;
  d.site.country = std::move(country);
  d.site.commodities = std::move(commodities);
  d.site.created_at = parse_timestamp("2025-01-01T00:00:00Z");
  d.dossier_markdown = fmt::format("## geology\n{}\n\n## history\n{}\n\n## controversies\n{}\n", geology, history,
                                   controversies);
  d.caption = std::move(caption);
  return d;
}

std::vector<DemoSite> build_sites() {
  std::vector<DemoSite> v;
  v.push_back(make(
      "elliots-no-1-open-cut", "Elliots No. 1 Open Cut", -35.59, 149.44, "AU", {"zinc", "lead", "copper", "silver", "gold"},
      "Volcanic-hosted massive sulphide lenses rich in zinc, lead and copper.",
      "Worked in several phases from the late nineteenth century until the early 1960s, with open-cut and "
      "underground operations.",
      "Sulphide waste left on site has fed acid drainage into the local river for decades.",
      "Large patches of exposed white soil and bare rock surround the old Elliots No. 1 open cut, with little "
      "vegetation on the waste heaps. The bare-soil index is high across the disturbed ground, pointing to ongoing "
      "soil erosion. Sulphide-rich waste makes acid mine drainage likely, and a small discoloured pond marks a "
      "possible source of chemically contaminated runoff toward nearby streams."));
  v.push_back(make(
      "northparkes", "Northparkes Mine Project", -32.92, 148.00, "AU", {"copper", "gold"},
      "Porphyry copper-gold deposits within volcanic rocks.",
      "Open pits were mined first, followed by block-cave underground mining such as the Endeavour 22 deposit.",
      "Tailings storage and water use in a farming district.",
      "The Endeavour 22 area of the Northparkes Mine Project shows large open pits and excavation terraces from "
      "copper and gold extraction, ringed by haul roads. Tailings ponds hold distinctively coloured water, flagged "
      "by the water index, which suggests chemical contamination risks for surface water and potential groundwater "
      "contamination. Cropland around the lease stays green, so the disturbance is sharply bounded."));
  v.push_back(make(
      "mary-kathleen", "Mary Kathleen Mine", -20.77, 140.01, "AU", {"uranium", "rare-earth-oxides"},
      "Uranium and rare earth mineralisation in metamorphic rocks of the Mount Isa inlier.",
      "Mined in two periods between the late 1950s and early 1980s, then closed and rehabilitated.",
      "Residual radioactivity and poor revegetation on the former tailings area.",
      "The legacy of uranium and rare earth oxide extraction at the Mary Kathleen Mine is visible as bare areas and "
      "disturbed soil around a flooded pit. Revegetation is patchy, so land degradation continues decades after "
      "closure. The pit lake, picked out by the water index, may still be affected by historical radioactive waste."));
  v.push_back(make(
      "thompson-mine", "Thompson Mine", 55.74, -97.86, "CA", {"nickel"},
      "Nickel sulphide ore bodies within the Thompson nickel belt.",
      "Production began in the 1960s and built the city of Thompson, Manitoba.",
      "Smelter emissions and their effect on the surrounding boreal forest.",
      "Grey tailings basins and a cleared plant site cut into dense boreal forest next to the town of Thompson. The "
      "vegetation index drops sharply at the edge of the disturbed area, and pale tailings dominate the bare-soil "
      "signal. Water bodies near the tailings could carry metal-rich runoff into the river system."));
  v.push_back(make(
      "bingham-canyon", "Bingham Canyon Mine", 40.52, -112.15, "US", {"copper", "gold", "molybdenum"},
      "Porphyry copper deposit with gold and molybdenum.", "Open-pit mining since the early twentieth century.",
      "A major pit-wall landslide and dust reaching nearby suburbs.",
      "A deep terraced open pit with spiralling benches dominates the scene, surrounded by broad waste dumps. "
      "Bare rock covers most of the box and vegetation survives only on the far slopes, so wind erosion and dust "
      "are the main environmental pressures visible."));
  v.push_back(make(
      "carajas", "Carajás Mine", -6.07, -50.17, "BR", {"iron"},
      "Banded iron formations with very high grade hematite.", "Large-scale open-pit iron mining since the 1980s.",
      "Forest clearing inside the Amazon basin.",
      "Red-brown benches of an iron ore pit cut into tropical forest, with a hard edge between cleared ground and "
      "canopy. The iron-oxide ratio peaks on exposed benches and sediment ponds sit downslope, pointing to erosion "
      "and runoff into forest streams."));
  v.push_back(make(
      "chuquicamata", "Chuquicamata", -22.29, -68.90, "CL", {"copper"},
      "Giant porphyry copper system.", "One of the largest open pits in the world; moved underground recently.",
      "Arsenic and dust exposure in nearby towns.",
      "An enormous elliptical pit with stepped walls sits in desert with no vegetation signal at all. Waste dumps "
      "and leach pads spread across the box and a turquoise tailings pond shows up in the water index, a sign of "
      "chemically altered water in an arid basin."));
  v.push_back(make(
      "grasberg", "Grasberg Mine", -4.05, 137.11, "ID", {"copper", "gold"},
      "Porphyry copper-gold deposit at high altitude.", "Open-pit mining since the late 1980s, now underground.",
      "Riverine tailings disposal into lowland rivers.",
      "A high-altitude open pit surrounded by bare rock sits above forested valleys. Sediment-laden drainage leaves "
      "the pit area, and the contrast between bare ground and rainforest marks the footprint of the operation."));
  std::sort(v.begin(), v.end(), [](const DemoSite& a, const DemoSite& b) { return a.site.site_id < b.site.site_id; });
  return v;
}

struct Spectrum {
  double b02, b03, b04, b08, b8a, b11, b12;
  int scl;
};

constexpr Spectrum kVegetation{400, 700, 500, 3200, 3300, 1800, 900, 4};
constexpr Spectrum kBareSoil{1400, 1600, 2000, 2300, 2400, 3200, 2800, 5};
constexpr Spectrum kWater{800, 900, 600, 300, 280, 150, 100, 6};
constexpr Spectrum kCloud{6000, 6100, 6200, 6400, 6400, 4200, 3500, 9};

std::string kind_tag(SceneKind kind) {
  switch (kind) {
    case SceneKind::clear: return "clear";
    case SceneKind::cloudy: return "cloudy";
    case SceneKind::post_horizon: return "late";
    case SceneKind::snow_season: return "snow";
  }
  return "clear";
}

Date scene_date(const catalog::MiningSite& site, SceneKind kind) {
  using namespace std::chrono;
  bool north = site.latitude > eo::kDefaultSnowLatitude;
  bool south = site.latitude < -eo::kDefaultSnowLatitude;
  switch (kind) {
    case SceneKind::clear:
      return north ? Date{2024y, July, 14d} : south ? Date{2024y, January, 20d} : Date{2024y, May, 14d};
    case SceneKind::cloudy:
      return north ? Date{2024y, July, 24d} : south ? Date{2024y, January, 30d} : Date{2024y, May, 24d};
    case SceneKind::post_horizon: return Date{2025y, March, 3d};
    case SceneKind::snow_season: return north ? Date{2024y, February, 10d} : Date{2024y, July, 10d};
  }
  return Date{2024y, May, 14d};
}

double cloud_estimate(SceneKind kind) { return kind == SceneKind::cloudy ? 0.40 : 0.02; }

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

const std::vector<DemoSite>& demo_sites() {
  static const std::vector<DemoSite> sites = build_sites();
  return sites;
}

const DemoSite& demo_site(std::string_view site_id) {
  for (const auto& d : demo_sites()) {
    if (d.site.site_id == site_id) return d;
  }
  throw Error(Errc::not_found, fmt::format("no demo site '{}'", site_id));
}

std::vector<std::string> australian_site_ids() {
  std::vector<std::string> out;
  for (const auto& d : demo_sites()) {
    if (d.site.country == "AU") out.push_back(d.site.site_id);
  }
  return out;
}

std::string fixture_scene_id(const catalog::MiningSite& site, SceneKind kind) {
  Date d = scene_date(site, kind);
  return fmt::format("s2-{}-{}-{}", site.site_id, kind_tag(kind), format_date(d));
}

raster::RasterGrid synthetic_scene(const catalog::MiningSite& site, SceneKind kind, std::size_t size) {
  if (size < 8) throw Error(Errc::argument, "synthetic scenes need at least 8x8 pixels");
  std::mt19937_64 rng(rag::fnv1a64(site.site_id + "/" + kind_tag(kind)));
  auto jitter = [&rng](int amplitude) { return static_cast<int>(rng() % static_cast<std::uint64_t>(2 * amplitude + 1)) - amplitude; };
  auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  const double n = static_cast<double>(size);
  const double pit_x = n * (0.40 + 0.2 * unit());
  const double pit_y = n * (0.40 + 0.2 * unit());
  const double pit_r = n * (0.18 + 0.08 * unit());
  const double pond_x = pit_x + pit_r * 1.4;
  const double pond_y = pit_y - pit_r * 0.6;
  const double pond_r = n * 0.07;
  const std::size_t cloud_cols = kind == SceneKind::cloudy ? static_cast<std::size_t>(std::ceil(n * 0.4)) : 0;

  std::vector<std::vector<float>> planes(8, std::vector<float>(size * size));
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double fx = static_cast<double>(x) + 0.5;
      double fy = static_cast<double>(y) + 0.5;
      Spectrum s = kVegetation;
      if (std::hypot(fx - pond_x, fy - pond_y) < pond_r) {
        s = kWater;
      } else if (std::hypot(fx - pit_x, fy - pit_y) < pit_r) {
        s = kBareSoil;
      } else if (std::hypot(fx - pit_x, fy - pit_y) < pit_r * 1.6 && unit() < 0.5) {
        s = kBareSoil;  // ragged waste-dump margin
      }
      if (x < cloud_cols) s = kCloud;
      const double bands[7] = {s.b02, s.b03, s.b04, s.b08, s.b8a, s.b11, s.b12};
      std::size_t i = y * size + x;
      for (std::size_t b = 0; b < 7; ++b) {
        int dn = static_cast<int>(bands[b]) + jitter(80);
        planes[b][i] = raster::dn_to_reflectance(static_cast<std::uint16_t>(std::clamp(dn, 1, 65535)));
      }
      planes[7][i] = static_cast<float>(s.scl);
    }
  }

  eo::BoundingBox box = eo::compute_bbox(site.latitude, site.longitude);
  raster::RasterGrid grid(size, size);
  grid.epsg = 4326;
  grid.storage = raster::SampleType::uint16;
  grid.geo = {box.west, box.north, box.width_degrees() / n, (box.north - box.south) / n};
  const char* ids[7] = {"B02", "B03", "B04", "B08", "B8A", "B11", "B12"};
  for (std::size_t b = 0; b < 7; ++b) grid.add_band(ids[b], raster::BandKind::reflectance, std::move(planes[b]));
  grid.add_band("SCL", raster::BandKind::class_code, std::move(planes[7]));
  return grid;
}

FixturePaths write_fixtures(const fs::path& dir, const FixtureOptions& options) {
  std::vector<const DemoSite*> sites;
  if (options.site_ids.empty()) {
    for (const auto& d : demo_sites()) sites.push_back(&d);
  } else {
    for (const auto& id : options.site_ids) sites.push_back(&demo_site(id));
  }

  FixturePaths p;
  p.root = dir;
  p.sites_csv = dir / "sites.csv";
  p.dossiers = dir / "dossiers";
  p.manifest = dir / "scenes" / "manifest.jsonl";
  p.captions = dir / "captions.json";
  p.config = dir / "config.toml";
  p.data_root = dir / "data";

  std::string csv = "site_id,name,lat,lon,country,commodities,created_at\n";
  json captions = json::object();
  std::string manifest;
  for (const DemoSite* d : sites) {
    const auto& s = d->site;
    std::string commodities;
    for (const auto& c : s.commodities) commodities += (commodities.empty() ? "" : ";") + c;
    csv += fmt::format("{},{},{},{},{},{},{}\n", s.site_id, csv_field(s.name), s.latitude, s.longitude, s.country,
                       csv_field(commodities), format_timestamp(s.created_at));
    write_file_atomic(p.dossiers / (s.site_id + ".md"), d->dossier_markdown);
    captions[s.site_id] = d->caption;

    std::vector<SceneKind> kinds = {SceneKind::clear, SceneKind::cloudy, SceneKind::post_horizon};
    if (std::abs(s.latitude) > eo::kDefaultSnowLatitude) kinds.push_back(SceneKind::snow_season);
    eo::BoundingBox footprint = eo::compute_bbox(s.latitude, s.longitude, 150.0);
    for (SceneKind kind : kinds) {
      std::string scene_id = fixture_scene_id(s, kind);
      std::string file = scene_id + ".tif";
      raster::GeoTiffWriteOptions wo;
      wo.compression = raster::Compression::deflate;
      wo.horizontal_predictor = true;
      write_file_atomic(p.manifest.parent_path() / file,
                        raster::write_geotiff(synthetic_scene(s, kind, options.raster_size), wo));
      json entry{{"scene_id", scene_id},
                 {"sensed_at", format_date(scene_date(s, kind)) + "T10:30:00Z"},
                 {"cloud_estimate", cloud_estimate(kind)},
                 {"raster_path", file},
                 {"bbox", {footprint.west, footprint.south, footprint.east, footprint.north}}};
      manifest += entry.dump() + "\n";
    }
  }
  write_file_atomic(p.sites_csv, csv);
  write_file_atomic(p.manifest, manifest);
  write_file_atomic(p.captions, captions.dump(2) + "\n");
  write_file_atomic(p.config, fmt::format(R"(# Offline demo: fixture scenes and stub model providers.
data_root = "data"
bind = "127.0.0.1:8080"
fixed_time = "{}"
parallelism = 4

[eo]
provider = "fixture"
manifest = "scenes/manifest.jsonl"

[captioner]
provider = "stub"
model = "stub-captioner"
fixture_captions = "captions.json"

[judge]
provider = "stub"
model = "stub-judge"
theta_avg = 4.0
theta_min = 3

[embedding]
provider = "stub"
dimension = 384

[rag]
provider = "stub"
k = 5
)",
                                          options.fixed_time));
  return p;
}

}  // namespace nudgex::gateway::fixtures
