#include "nudgex/eo/scenes.hpp"
#include "nudgex/error.hpp"
#include "nudgex/gateway/fixtures.hpp"
#include "nudgex/raster/geotiff.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

using namespace nudgex;
using namespace nudgex::eo;
using nlohmann::json;
using nxtest::TempDir;
namespace fx = nudgex::gateway::fixtures;

namespace {

raster::RasterGrid scl_grid(std::size_t w, std::size_t h, const std::vector<float>& scl) {
  raster::RasterGrid g(w, h);
  g.add_band("B02", raster::BandKind::reflectance, std::vector<float>(w * h, 0.05f));
  g.add_band("B03", raster::BandKind::reflectance, std::vector<float>(w * h, 0.06f));
  std::vector<float> red(w * h);
  for (std::size_t i = 0; i < red.size(); ++i) red[i] = 0.01f * static_cast<float>(i % 50);
  g.add_band("B04", raster::BandKind::reflectance, red);
  g.add_band("SCL", raster::BandKind::class_code, scl);
  return g;
}

catalog::MiningSite equatorial_site() { return fx::demo_site("grasberg").site; }

/// Manifest entries sharing one raster file.
struct Manifest {
  TempDir dir;
  fs::path file;

  explicit Manifest(const std::vector<std::tuple<std::string, std::string, double>>& entries) {
    auto grid = fx::synthetic_scene(equatorial_site(), fx::SceneKind::clear, 16);
    write_file_atomic(dir / "scene.tif", raster::write_geotiff(grid));
    std::string text;
    for (const auto& [id, when, cloud] : entries) {
      text += json{{"scene_id", id}, {"sensed_at", when}, {"cloud_estimate", cloud}, {"raster_path", "scene.tif"}}
                  .dump() +
              "\n";
    }
    file = dir / "manifest.jsonl";
    write_file_atomic(file, text);
  }
};

}  // namespace

TEST(Quality, AllVegetationIsClear) {
  auto q = assess_quality(scl_grid(10, 10, std::vector<float>(100, 4.0f)), 0.10);
  EXPECT_DOUBLE_EQ(q.cloud_fraction, 0.0);
  EXPECT_DOUBLE_EQ(q.valid_fraction, 1.0);
  EXPECT_TRUE(q.auto_pass);
  EXPECT_TRUE(q.from_scl);
}

TEST(Quality, HalfHighProbabilityCloud) {
  std::vector<float> scl(100, 4.0f);
  std::fill(scl.begin(), scl.begin() + 50, 9.0f);
  auto q = assess_quality(scl_grid(10, 10, scl), 0.10);
  EXPECT_EQ(q.cloud_pixels, 50u);
  EXPECT_DOUBLE_EQ(q.cloud_fraction, 0.5);
  EXPECT_FALSE(q.auto_pass);
}

TEST(Quality, ConstantRedHasZeroContrast) {
  raster::RasterGrid g(8, 8);
  g.add_band("B04", raster::BandKind::reflectance, std::vector<float>(64, 0.2f));
  g.add_band("SCL", raster::BandKind::class_code, std::vector<float>(64, 5.0f));
  EXPECT_DOUBLE_EQ(assess_quality(g, 0.1).contrast, 0.0);
}

TEST(Quality, CountingIdentityOverValidPixels) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> cls(0, 11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> scl(400);
    for (auto& v : scl) v = static_cast<float>(cls(rng));
    auto g = scl_grid(20, 20, scl);
    for (std::size_t i = 0; i < 400; i += 37) g.set_nodata(i, true);
    auto q = assess_quality(g, 0.10);
    EXPECT_EQ(q.cloud_pixels + q.clear_pixels, q.valid_pixels);
    if (q.valid_pixels > 0) {
      double cloud = static_cast<double>(q.cloud_pixels) / q.valid_pixels;
      double clear = static_cast<double>(q.clear_pixels) / q.valid_pixels;
      EXPECT_DOUBLE_EQ(q.cloud_fraction, cloud);
      EXPECT_EQ(cloud + clear, 1.0);
    }
  }
}

TEST(Quality, BrightnessFallbackWithoutScl) {
  raster::RasterGrid g(4, 1);
  g.add_band("B02", raster::BandKind::reflectance, {0.5f, 0.5f, 0.1f, 0.31f});
  g.add_band("B03", raster::BandKind::reflectance, {0.5f, 0.5f, 0.1f, 0.31f});
  g.add_band("B04", raster::BandKind::reflectance, {0.5f, 0.2f, 0.1f, 0.31f});
  auto q = assess_quality(g, 0.1);
  EXPECT_FALSE(q.from_scl);
  EXPECT_EQ(q.cloud_pixels, 2u);
}

TEST(Quality, NoValidPixelsIsFullyCloudy) {
  auto g = scl_grid(2, 2, std::vector<float>(4, 0.0f));
  auto q = assess_quality(g, 0.1);
  EXPECT_EQ(q.valid_pixels, 0u);
  EXPECT_DOUBLE_EQ(q.cloud_fraction, 1.0);
  EXPECT_FALSE(q.auto_pass);
}

TEST(FetchScenes, CloudyCandidateIsFilteredOut) {
  Manifest m({{"a", "2024-03-01T10:00:00Z", 0.01},
              {"b", "2024-04-01T10:00:00Z", 0.05},
              {"c", "2024-05-01T10:00:00Z", 0.40},
              {"d", "2024-06-01T10:00:00Z", 0.02}});
  TempDir data;
  FixtureProvider provider(m.file);
  SceneStore store(data.path());
  auto plan = plan_acquisition(equatorial_site(), AcquisitionConfig{});
  auto scenes = fetch_scenes(plan, provider, store);
  std::vector<std::string> ids;
  for (const auto& s : scenes) ids.push_back(s.scene_id);
  EXPECT_EQ(ids, (std::vector<std::string>{"a", "b", "d"}));
  for (const auto& s : scenes) {
    EXPECT_EQ(s.review_state, ReviewState::pending);
    EXPECT_EQ(s.site_id, "grasberg");
    EXPECT_GT(s.resolution_m, 0.0);
  }
  EXPECT_EQ(store.list().size(), 3u);
}

TEST(FetchScenes, EmptyWindowGivesNothing) {
  Manifest m({{"a", "2023-03-01T10:00:00Z", 0.01}});
  TempDir data;
  FixtureProvider provider(m.file);
  SceneStore store(data.path());
  auto plan = plan_acquisition(equatorial_site(), AcquisitionConfig{});
  EXPECT_TRUE(fetch_scenes(plan, provider, store).empty());
}

TEST(FetchScenes, PostHorizonSceneExcluded) {
  Manifest m({{"in", "2024-12-31T23:00:00Z", 0.01}, {"late", "2025-01-01T00:00:00Z", 0.01}});
  TempDir data;
  FixtureProvider provider(m.file);
  SceneStore store(data.path());
  AcquisitionConfig cfg;
  cfg.date_end = parse_date("2025-06-30");
  auto scenes = fetch_scenes(plan_acquisition(equatorial_site(), cfg), provider, store);
  ASSERT_EQ(scenes.size(), 1u);
  EXPECT_EQ(scenes[0].scene_id, "in");
}

TEST(FetchScenes, RandomManifestsNeverViolateThePlan) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> day(0, 800);
  std::uniform_real_distribution<double> cloud(0.0, 0.3);
  auto site = fx::demo_site("thompson-mine").site;
  auto plan = plan_acquisition(site, AcquisitionConfig{});
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::tuple<std::string, std::string, double>> entries;
    for (int i = 0; i < 30; ++i) {
      auto t = parse_timestamp("2023-06-01T10:00:00Z") + std::chrono::days(day(rng));
      entries.emplace_back("s" + std::to_string(i), format_timestamp(t), cloud(rng));
    }
    Manifest m(entries);
    TempDir data;
    FixtureProvider provider(m.file);
    SceneStore store(data.path());
    for (const auto& s : fetch_scenes(plan, provider, store)) {
      auto date = date_of(s.sensed_at);
      EXPECT_TRUE(plan.window.contains(date));
      EXPECT_LE(date, plan.horizon_cutoff);
      EXPECT_TRUE(plan.allowed_months.contains(static_cast<int>(static_cast<unsigned>(date.month()))));
      EXPECT_LE(s.cloud_estimate, plan.max_cloud_fraction);
    }
  }
}

TEST(FetchScenes, FootprintMustIntersect) {
  TempDir dir;
  auto site = equatorial_site();
  auto grid = fx::synthetic_scene(site, fx::SceneKind::clear, 16);
  write_file_atomic(dir / "scene.tif", raster::write_geotiff(grid));
  write_file_atomic(dir / "manifest.jsonl",
                    json{{"scene_id", "far"}, {"sensed_at", "2024-05-01T10:00:00Z"}, {"cloud_estimate", 0.0},
                         {"raster_path", "scene.tif"}, {"bbox", {10, 10, 11, 11}}}
                            .dump() +
                        "\n");
  FixtureProvider provider(dir / "manifest.jsonl");
  EXPECT_TRUE(provider.search(plan_acquisition(site, AcquisitionConfig{})).empty());
}

TEST(SceneStore, ReviewStateMachine) {
  Manifest m({{"a", "2024-03-01T10:00:00Z", 0.01}});
  TempDir data;
  FixtureProvider provider(m.file);
  SceneStore store(data.path(), fixed_clock(parse_timestamp("2025-01-15T12:00:00Z")));
  fetch_scenes(plan_acquisition(equatorial_site(), AcquisitionConfig{}), provider, store);
  auto approved = store.review("a", ReviewState::approved, "ana");
  EXPECT_EQ(approved.review_state, ReviewState::approved);
  EXPECT_EQ(approved.reviewer, "ana");
  try {
    store.review("a", ReviewState::rejected, "bo");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::conflict);
  }
  SceneStore reopened(data.path());
  EXPECT_EQ(reopened.get("a").review_state, ReviewState::approved);
  EXPECT_THROW(store.review("missing", ReviewState::approved, "ana"), Error);
}

TEST(SceneStore, ConcurrentReviewsRecordOneVerdict) {
  Manifest m({{"a", "2024-03-01T10:00:00Z", 0.01}});
  TempDir data;
  FixtureProvider provider(m.file);
  SceneStore store(data.path());
  fetch_scenes(plan_acquisition(equatorial_site(), AcquisitionConfig{}), provider, store);
  std::atomic<int> wins{0}, conflicts{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] {
      try {
        store.review("a", i % 2 ? ReviewState::approved : ReviewState::rejected, "r" + std::to_string(i));
        ++wins;
      } catch (const Error& e) {
        if (e.code() == Errc::conflict) ++conflicts;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(wins.load(), 1);
  EXPECT_EQ(conflicts.load(), 7);
}

TEST(SceneStore, AddIsIdempotent) {
  Manifest m({{"a", "2024-03-01T10:00:00Z", 0.01}});
  TempDir data;
  FixtureProvider provider(m.file);
  SceneStore store(data.path());
  auto plan = plan_acquisition(equatorial_site(), AcquisitionConfig{});
  fetch_scenes(plan, provider, store);
  store.review("a", ReviewState::approved, "ana");
  auto hash = tree_hash(data.path());
  auto again = fetch_scenes(plan, provider, store);
  ASSERT_EQ(again.size(), 1u);
  EXPECT_EQ(again[0].review_state, ReviewState::approved);
  EXPECT_EQ(tree_hash(data.path()), hash);
}

TEST(SceneIds, Validation) {
  EXPECT_TRUE(is_valid_scene_id("S2A_MSIL2A_20240714T103031"));
  EXPECT_FALSE(is_valid_scene_id(".."));
  EXPECT_FALSE(is_valid_scene_id("a/b"));
  EXPECT_FALSE(is_valid_scene_id(""));
}

TEST(OpenEo, SearchRequestCarriesPlan) {
  OpenEoProvider p(OpenEoConfig{}, Sleeper{});
  auto plan = plan_acquisition(fx::demo_site("thompson-mine").site, AcquisitionConfig{});
  auto body = p.search_request(plan);
  EXPECT_EQ(body["collections"][0], "SENTINEL2_L2A");
  EXPECT_EQ(body["bbox"].size(), 4u);
  EXPECT_DOUBLE_EQ(body["query"]["eo:cloud_cover"]["lte"].get<double>(), 10.0);
  auto graph = p.process_graph({"x", parse_timestamp("2024-07-14T10:00:00Z"), 0.01, ""}, plan);
  EXPECT_NE(graph.dump().find("save_result"), std::string::npos);
}

TEST(OpenEo, ParsesStacItems) {
  json body = {{"features",
                {{{"id", "S2B_1"}, {"properties", {{"datetime", "2024-07-14T10:30:31Z"}, {"eo:cloud_cover", 4.5}}}}}}};
  auto c = OpenEoProvider::parse_search_response(body);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].scene_id, "S2B_1");
  EXPECT_NEAR(c[0].cloud_estimate, 0.045, 1e-12);
}
