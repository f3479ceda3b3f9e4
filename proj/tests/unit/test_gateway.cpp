#include "nudgex/error.hpp"
#include "nudgex/gateway/config.hpp"
#include "nudgex/gateway/fixtures.hpp"
#include "nudgex/gateway/workspace.hpp"
#include "nudgex/raster/png.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace nudgex;
using namespace nudgex::gateway;
using captioner::CaptionStatus;
using nxtest::FixtureWorld;
using nxtest::TempDir;
namespace fx = nudgex::gateway::fixtures;

namespace {

template <class Fn>
Errc error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::io;
}

const std::vector<std::string> kThree = {"mary-kathleen", "northparkes", "thompson-mine"};

}  // namespace

TEST(Config, DefaultsAndRelativePaths) {
  auto c = parse_config("data_root = \"d\"\n[eo]\nmanifest = \"m/manifest.jsonl\"\n", "/base");
  EXPECT_EQ(c.data_root, fs::path("/base/d"));
  EXPECT_EQ(c.eo.manifest, fs::path("/base/m/manifest.jsonl"));
  EXPECT_EQ(c.rag.k, 5u);
  EXPECT_DOUBLE_EQ(c.judge.theta_avg, 4.0);
  EXPECT_EQ(c.judge.theta_min, 3);
  EXPECT_EQ(c.captioner.chat.api_key_env, "NUDGEX_MLLM_API_KEY");
  EXPECT_FALSE(c.fixed_time);
}

TEST(Config, FixedTimeAndDates) {
  auto c = parse_config(
      "fixed_time = 2025-01-15T12:00:00Z\n"
      "[acquisition]\ndate_start = 2024-03-01\ndate_end = \"2024-09-30\"\nmax_cloud_fraction = 0.2\n",
      "/");
  ASSERT_TRUE(c.fixed_time);
  EXPECT_EQ(format_timestamp(*c.fixed_time), "2025-01-15T12:00:00Z");
  EXPECT_EQ(format_date(c.acquisition.date_start), "2024-03-01");
  EXPECT_EQ(format_date(c.acquisition.date_end), "2024-09-30");
  EXPECT_EQ(format_timestamp(c.clock()()), "2025-01-15T12:00:00Z");
}

TEST(Config, Rejections) {
  EXPECT_EQ(error_code_of([] { parse_config("colour = 1\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("[judge]\napi_key = \"sk-123\"\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("[judge]\ntheta_avg = 6.0\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("[rag]\nk = 0\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("[acquisition]\nmax_cloud_fraction = 2\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("bind = \"nohost\"\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("[captioner]\nindices = [\"NOPE\"]\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("[indices.BAD]\nexpression = \"B04 +\"\n", "/"); }), Errc::config);
  EXPECT_EQ(error_code_of([] { parse_config("= broken", "/"); }), Errc::config);
}

TEST(Config, CustomIndexTable) {
  auto c = parse_config(
      "[indices.CLAY]\nexpression = \"B11 / B12\"\nmin = 0.0\nmax = 4.0\nthreshold = 1.5\nlabel = \"clay\"\n"
      "[captioner]\nindices = [\"NDVI\", \"CLAY\"]\n",
      "/");
  EXPECT_TRUE(c.indices.contains("CLAY"));
  EXPECT_DOUBLE_EQ(*c.indices.get("CLAY").threshold, 1.5);
  EXPECT_EQ(c.captioner.indices, (std::vector<std::string>{"NDVI", "CLAY"}));
}

TEST(Config, SplitBind) {
  EXPECT_EQ(split_bind("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_THROW(split_bind("127.0.0.1"), Error);
  EXPECT_THROW(split_bind("h:99999"), Error);
}

TEST(Fixtures, DemoCorpusShape) {
  EXPECT_EQ(fx::demo_sites().size(), 8u);
  EXPECT_EQ(fx::australian_site_ids(),
            (std::vector<std::string>{"elliots-no-1-open-cut", "mary-kathleen", "northparkes"}));
  auto grid = fx::synthetic_scene(fx::demo_site("northparkes").site, fx::SceneKind::cloudy, 32);
  auto q = eo::assess_quality(grid, 0.10);
  EXPECT_GT(q.cloud_fraction, 0.3);
  auto clear = eo::assess_quality(fx::synthetic_scene(fx::demo_site("northparkes").site, fx::SceneKind::clear, 32), 0.1);
  EXPECT_TRUE(clear.auto_pass);
  FixtureWorld a(kThree), b(kThree);
  EXPECT_EQ(tree_hash(a.dir.path()), tree_hash(b.dir.path()));
}

TEST(Pipeline, FullRunWithStubs) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  auto ingest = ws->ingest(world.paths.sites_csv, world.paths.dossiers);
  EXPECT_TRUE(ingest.ok());
  EXPECT_EQ(ingest.count(Outcome::ok), 6u);
  auto acquire = ws->acquire();
  EXPECT_TRUE(acquire.ok());
  EXPECT_EQ(acquire.count(Outcome::ok), 3u);
  for (const auto& s : ws->scenes().list()) ws->review_scene(s.scene_id, "approve", "ana");
  auto caption = ws->caption();
  EXPECT_TRUE(caption.ok());
  EXPECT_EQ(caption.count(Outcome::ok), 3u);
  auto judge = ws->judge();
  EXPECT_TRUE(judge.ok());
  auto index = ws->rag_index();
  EXPECT_TRUE(index.ok());
  EXPECT_EQ(ws->index().size(), 3u);
  for (const auto& c : ws->captions().list()) {
    EXPECT_EQ(c.status, CaptionStatus::accepted);
    EXPECT_TRUE(fs::exists(ws->pair_path(c.site_id, c.caption_id, "png")));
    EXPECT_TRUE(fs::exists(ws->pair_path(c.site_id, c.caption_id, "json")));
  }
}

TEST(Pipeline, JudgeWithNoCandidatesIsEmptyAndOk) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  auto run = ws->judge();
  EXPECT_TRUE(run.ok());
  EXPECT_TRUE(run.items.empty());
}

TEST(Pipeline, CaptionBeforeApprovalIsStageOrder) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  EXPECT_EQ(error_code_of([&] { ws->caption(); }), Errc::stage_order);
  ws->ingest(world.paths.sites_csv, world.paths.dossiers);
  ws->acquire();
  EXPECT_EQ(error_code_of([&] { ws->caption(); }), Errc::stage_order);
  EXPECT_EQ(error_code_of([&] { ws->rag_index(); }), Errc::stage_order);
}

TEST(Pipeline, AcquireBeforeIngestIsStageOrder) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  EXPECT_EQ(error_code_of([&] { ws->acquire(); }), Errc::stage_order);
  ws->ingest(world.paths.sites_csv, world.paths.dossiers);
  EXPECT_EQ(error_code_of([&] { ws->acquire(Scope{"nowhere"}); }), Errc::stage_order);
}

TEST(Pipeline, RejectedSceneIsNeverCaptioned) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  ws->ingest(world.paths.sites_csv, world.paths.dossiers);
  ws->acquire();
  auto scenes = ws->scenes().list();
  ASSERT_EQ(scenes.size(), 3u);
  ws->review_scene(scenes[0].scene_id, "reject", "ana");
  ws->review_scene(scenes[1].scene_id, "approve", "ana");
  ws->review_scene(scenes[2].scene_id, "approve", "ana");
  auto run = ws->caption();
  for (const auto& item : run.items) EXPECT_NE(item.item, "scene:" + scenes[0].scene_id);
  for (const auto& c : ws->captions().list()) EXPECT_NE(c.scene_id, scenes[0].scene_id);
  EXPECT_EQ(ws->captions().size(), 2u);
}

TEST(Pipeline, ScopeLimitsWork) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  ws->ingest(world.paths.sites_csv, world.paths.dossiers);
  auto run = ws->acquire(Scope{"northparkes"});
  EXPECT_EQ(run.count(Outcome::ok), 1u);
  EXPECT_EQ(ws->scenes().list().size(), 1u);
}

TEST(Pipeline, JudgeVerdictsAreAuditable) {
  FixtureWorld world(kThree);
  Providers providers = make_providers(world.config);
  auto judge = std::make_shared<llm::StubJudgeClient>();
  judge->set_scores("northparkes", {5, 5, 5, 5, 2});
  providers.judge = judge;
  Workspace ws(world.config, providers);
  nxtest::run_full_pipeline(ws, world);
  std::size_t accepted = 0, rejected = 0;
  for (const auto& c : ws.captions().list()) {
    auto s = ws.scores().find(c.caption_id);
    ASSERT_TRUE(s);
    if (c.status == CaptionStatus::accepted) {
      ++accepted;
      EXPECT_TRUE(s->passed);
    } else {
      ASSERT_EQ(c.status, CaptionStatus::rejected_by_judge);
      ++rejected;
      EXPECT_FALSE(s->passed);
      EXPECT_EQ(c.site_id, "northparkes");
      EXPECT_FALSE(fs::exists(ws.pair_path(c.site_id, c.caption_id, "png")));
    }
  }
  EXPECT_EQ(accepted, 2u);
  EXPECT_EQ(rejected, 1u);
  EXPECT_EQ(ws.index().size(), 2u);
}

TEST(Pipeline, RerunningStagesChangesNothing) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  nxtest::run_full_pipeline(*ws, world);
  auto before = tree_hash(world.config.data_root);
  EXPECT_TRUE(ws->ingest(world.paths.sites_csv, world.paths.dossiers).ok());
  for (Stage s : {Stage::acquire, Stage::caption, Stage::judge, Stage::index}) {
    auto run = ws->run_stage(s);
    EXPECT_TRUE(run.ok()) << to_string(s);
    EXPECT_EQ(run.count(Outcome::ok), 0u) << to_string(s);
  }
  EXPECT_EQ(tree_hash(world.config.data_root), before);
  auto fresh = world.workspace();
  for (Stage s : {Stage::acquire, Stage::caption, Stage::judge, Stage::index}) fresh->run_stage(s);
  EXPECT_EQ(tree_hash(world.config.data_root), before);
}

TEST(Pipeline, HumanCaptionReview) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  nxtest::run_full_pipeline(*ws, world);
  auto captions = ws->captions().list();
  ASSERT_EQ(captions.size(), 3u);
  auto confirmed = ws->review_caption(captions[0].caption_id, "approve", "ana");
  EXPECT_EQ(confirmed.status, CaptionStatus::accepted);
  EXPECT_EQ(confirmed.reviewer, "ana");

  const auto& victim = captions[1];
  auto rejected = ws->review_caption(victim.caption_id, "reject", "ana");
  EXPECT_EQ(rejected.status, CaptionStatus::rejected_by_human);
  EXPECT_FALSE(fs::exists(ws->pair_path(victim.site_id, victim.caption_id, "png")));
  EXPECT_FALSE(ws->index().find(rag::chunk_id_for(victim.caption_id)));
  EXPECT_EQ(ws->index().size(), 2u);
  EXPECT_EQ(rag::VectorIndex::load(world.config.data_root / "rag").size(), 2u);
  EXPECT_EQ(error_code_of([&] { ws->review_caption(victim.caption_id, "reject", "bo"); }), Errc::conflict);
  EXPECT_EQ(error_code_of([&] { ws->review_caption(victim.caption_id, "maybe", "bo"); }), Errc::argument);
  EXPECT_EQ(error_code_of([&] { ws->review_caption("cap-missing", "approve", "bo"); }), Errc::not_found);
}

TEST(Pipeline, ApprovingACandidateNeedsTheJudge) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  ws->ingest(world.paths.sites_csv, world.paths.dossiers);
  ws->acquire();
  for (const auto& s : ws->scenes().list()) ws->review_scene(s.scene_id, "approve", "ana");
  ws->caption();
  auto c = ws->captions().list().at(0);
  EXPECT_EQ(error_code_of([&] { ws->review_caption(c.caption_id, "approve", "ana"); }), Errc::precondition);
  EXPECT_EQ(ws->captions().get(c.caption_id).status, CaptionStatus::candidate);
}

TEST(Pipeline, SecondRunnerIsBusy) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  ws->ingest(world.paths.sites_csv, world.paths.dossiers);
  RunLock held(world.config.data_root);
  EXPECT_EQ(error_code_of([&] { ws->acquire(); }), Errc::busy);
}

TEST(Pipeline, QueryThroughWorkspace) {
  FixtureWorld world;
  auto ws = world.workspace();
  nxtest::run_full_pipeline(*ws, world);
  auto a = ws->query("How do mining operations in Australia impact the environment?", 3, "AU");
  ASSERT_EQ(a.hits_used.size(), 3u);
  for (const auto& h : a.hits_used) EXPECT_EQ(h.chunk.country, "AU");
  EXPECT_EQ(a.cited_site_ids.size(), 3u);
  EXPECT_EQ(error_code_of([&] { ws->query("anything", 3, "ZZ"); }), Errc::grounding_unavailable);
  EXPECT_EQ(error_code_of([&] { ws->query("   ", 3); }), Errc::argument);
}

TEST(Pipeline, RenderingEndpoints) {
  FixtureWorld world(kThree);
  auto ws = world.workspace();
  nxtest::run_full_pipeline(*ws, world);
  auto id = ws->scenes().list().at(0).scene_id;
  auto rgb = raster::decode_png_rgb(ws->scene_rgb_png(id));
  EXPECT_EQ(rgb.width, 64u);
  EXPECT_EQ(raster::decode_png_rgb(ws->scene_index_png(id, "ndvi")).width, 64u);
  EXPECT_EQ(error_code_of([&] { ws->scene_index_png(id, "FOO"); }), Errc::unknown_index);
  EXPECT_EQ(error_code_of([&] { ws->scene_rgb_png("unknown"); }), Errc::not_found);
}
