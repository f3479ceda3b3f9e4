#include "nudgex/captioner/captioner.hpp"
#include "nudgex/error.hpp"
#include "nudgex/gateway/fixtures.hpp"
#include "nudgex/llm/chat.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <set>
#include <thread>

using namespace nudgex;
using namespace nudgex::captioner;
using nxtest::TempDir;
namespace fx = nudgex::gateway::fixtures;

namespace {

const auto kNow = parse_timestamp("2025-01-15T12:00:00Z");

struct Inputs {
  catalog::MiningSite site = fx::demo_site("thompson-mine").site;
  catalog::SiteDossier dossier;
  eo::SceneAsset scene;
  raster::RasterGrid grid;
  std::vector<raster::IndexProduct> products;

  Inputs() {
    dossier = catalog::parse_dossier(site.site_id, fx::demo_site("thompson-mine").dossier_markdown).dossier;
    grid = fx::synthetic_scene(site, fx::SceneKind::clear, 32);
    scene.scene_id = "s2-thompson";
    scene.site_id = site.site_id;
    scene.review_state = eo::ReviewState::approved;
    products = compute_products(grid, PromptConfig{}.indices, raster::IndexRegistry::defaults());
  }

  PromptBundle bundle(const PromptConfig& config = PromptConfig::defaults()) const {
    return assemble_prompt(site, dossier, scene, grid, products, config).bundle;
  }
};

GenerateOptions quiet() {
  GenerateOptions o;
  o.sleep = {};
  o.clock = fixed_clock(kNow);
  return o;
}

}  // namespace

TEST(Chat, WireFormatCarriesBase64Png) {
  llm::ChatRequest r;
  r.model = "m";
  r.messages.push_back({"user", {llm::ContentPart::of_text("hi"), llm::ContentPart::of_png("\x89PNG")}});
  r.tags["site_id"] = "x";
  auto wire = llm::to_wire(r);
  EXPECT_EQ(wire["messages"][0]["content"][1]["type"], "image");
  EXPECT_EQ(wire["messages"][0]["content"][1]["mime_type"], "image/png");
  EXPECT_EQ(wire["messages"][0]["content"][1]["data"], base64_encode("\x89PNG"));
  EXPECT_FALSE(wire.contains("tags"));
  EXPECT_EQ(r.image_count(), 1u);
}

TEST(Chat, ParsesChoices) {
  EXPECT_EQ(llm::parse_chat_response(R"({"choices":[{"message":{"content":"ok"}}]})"), "ok");
  EXPECT_EQ(llm::parse_chat_response(
                R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]})"),
            "ab");
  EXPECT_THROW(llm::parse_chat_response(R"({"nope":1})"), Error);
  EXPECT_THROW(llm::parse_chat_response("not json"), Error);
}

TEST(Chat, FixtureClientLookupOrder) {
  llm::FixtureChatClient c({{"a/s1", "scene caption"}, {"a", "site caption"}}, false);
  llm::ChatRequest r;
  r.tags = {{"site_id", "a"}, {"scene_id", "s1"}};
  EXPECT_EQ(c.complete(r), "scene caption");
  r.tags["scene_id"] = "s2";
  EXPECT_EQ(c.complete(r), "site caption");
  r.tags["site_id"] = "b";
  EXPECT_EQ(c.complete(r), "");
}

TEST(Prompt, DeterministicHash) {
  Inputs in;
  EXPECT_EQ(in.bundle().prompt_hash(), in.bundle().prompt_hash());
  EXPECT_EQ(in.bundle().prompt_hash().size(), 64u);
}

TEST(Prompt, AnySingleByteChangeChangesHash) {
  Inputs in;
  auto base = in.bundle();
  std::set<std::string> hashes{base.prompt_hash()};
  for (std::size_t at : {std::size_t(0), base.dossier_text.size() / 2, base.dossier_text.size() - 1}) {
    PromptBundle b = base;
    b.dossier_text[at] ^= 0x01;
    EXPECT_TRUE(hashes.insert(b.prompt_hash()).second);
  }
  for (std::size_t at : {std::size_t(0), base.image.size() / 2, base.image.size() - 1}) {
    PromptBundle b = base;
    b.image[at] ^= 0x01;
    EXPECT_TRUE(hashes.insert(b.prompt_hash()).second);
  }
  PromptBundle b = base;
  b.shots[0].caption[3] ^= 0x01;
  EXPECT_TRUE(hashes.insert(b.prompt_hash()).second);
  b = base;
  b.shots[1].context[0] ^= 0x01;
  EXPECT_TRUE(hashes.insert(b.prompt_hash()).second);
}

TEST(Prompt, PendingSceneIsPrecondition) {
  Inputs in;
  in.scene.review_state = eo::ReviewState::pending;
  try {
    in.bundle();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::precondition);
  }
}

TEST(Prompt, ShotsKeepConfigOrder) {
  Inputs in;
  PromptConfig c = PromptConfig::defaults();
  c.shots = {{"ctx one", "cap one"}, {"ctx two", "cap two"}};
  auto b = in.bundle(c);
  ASSERT_EQ(b.shots.size(), 2u);
  EXPECT_EQ(b.shots[0].caption, "cap one");
  EXPECT_EQ(b.shots[1].caption, "cap two");
  auto req = to_chat_request(b);
  ASSERT_EQ(req.messages.size(), 6u);
  EXPECT_EQ(req.messages[0].role, "system");
  EXPECT_EQ(req.messages[2].text(), "cap one");
  EXPECT_EQ(req.messages[5].role, "user");
  EXPECT_EQ(req.image_count(), 1u);
  EXPECT_NE(req.messages[5].text().find("Thompson Mine"), std::string::npos);
  EXPECT_NE(req.messages[5].text().find("NDVI mean"), std::string::npos);
}

TEST(Prompt, TooManyShotsIsConfigError) {
  Inputs in;
  PromptConfig c = PromptConfig::defaults();
  c.shots.assign(kMaxShots + 1, Shot{"c", "d"});
  try {
    in.bundle(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
  }
}

TEST(Prompt, MissingDossierWarns) {
  Inputs in;
  auto a = assemble_prompt(in.site, std::nullopt, in.scene, in.grid, in.products, PromptConfig::defaults());
  EXPECT_EQ(a.warnings.size(), 1u);
  EXPECT_NE(a.bundle.dossier_text.find("Thompson Mine"), std::string::npos);
}

TEST(Prompt, ShotsFileRoundTrip) {
  auto text = render_shots(default_shots());
  EXPECT_EQ(parse_shots(text), default_shots());
  EXPECT_THROW(parse_shots("{}"), Error);
}

TEST(Generate, StubEchoesFixtureCaption) {
  Inputs in;
  TempDir dir;
  CaptionStore store(dir.path());
  llm::FixtureChatClient client({{"thompson-mine", "  Nickel tailings dominate the view.  "}}, false);
  auto g = generate_caption(in.bundle(), client, store, "thompson-mine", "s2-thompson", quiet());
  EXPECT_EQ(g.caption.text, "Nickel tailings dominate the view.");
  EXPECT_EQ(g.caption.status, CaptionStatus::candidate);
  EXPECT_EQ(g.attempts, 1);
  EXPECT_EQ(store.size(), 1u);
}

TEST(Generate, RetriesTransportFailures) {
  Inputs in;
  TempDir dir;
  CaptionStore store(dir.path());
  llm::ScriptedChatClient client({TransportError("503"), TransportError("timeout"), std::string("caption")});
  auto o = quiet();
  o.retry.max_attempts = 3;
  auto g = generate_caption(in.bundle(), client, store, "thompson-mine", "s2-thompson", o);
  EXPECT_EQ(g.attempts, 3);
  EXPECT_EQ(client.calls(), 3);
  EXPECT_EQ(store.size(), 1u);
  EXPECT_EQ(client.requests()[0].tags.at("scene_id"), "s2-thompson");
}

TEST(Generate, EmptyResponseStoresNothing) {
  Inputs in;
  TempDir dir;
  CaptionStore store(dir.path());
  llm::ScriptedChatClient client({std::string("   \n")});
  try {
    generate_caption(in.bundle(), client, store, "thompson-mine", "s2-thompson", quiet());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_response);
  }
  EXPECT_EQ(store.size(), 0u);
}

TEST(Generate, ConcurrentGenerationLosesNothing) {
  Inputs in;
  TempDir dir;
  CaptionStore store(dir.path());
  llm::FixtureChatClient client({}, true);
  auto bundle = in.bundle();
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 5; ++i) {
        generate_caption(bundle, client, store, "thompson-mine", "scene-" + std::to_string(t * 5 + i), quiet());
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(store.size(), 40u);
  CaptionStore reopened(dir.path());
  EXPECT_EQ(reopened.size(), 40u);
}

TEST(CaptionStore, StatusMachine) {
  TempDir dir;
  CaptionStore store(dir.path());
  auto c = store.create("s", "scene", "text", "m", "h", kNow);
  EXPECT_EQ(c.caption_id, make_caption_id("scene", "h", 0));
  auto c2 = store.create("s", "scene", "text 2", "m", "h", kNow);
  EXPECT_EQ(c2.caption_id, make_caption_id("scene", "h", 1));
  EXPECT_EQ(store.count_for("scene", "h"), 2u);

  try {
    store.confirm(c.caption_id, "ana", kNow);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::precondition);
  }
  store.transition(c.caption_id, CaptionStatus::candidate, CaptionStatus::accepted);
  try {
    store.transition(c.caption_id, CaptionStatus::candidate, CaptionStatus::rejected_by_judge);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::conflict);
  }
  auto confirmed = store.confirm(c.caption_id, "ana", kNow);
  EXPECT_EQ(confirmed.reviewer, "ana");
  EXPECT_THROW(store.confirm(c.caption_id, "bo", kNow), Error);
  auto rejected = store.reject_by_human(c.caption_id, "bo", kNow);
  EXPECT_EQ(rejected.status, CaptionStatus::rejected_by_human);
  EXPECT_THROW(store.reject_by_human(c.caption_id, "bo", kNow), Error);
  EXPECT_THROW(store.create("s", "scene", "  ", "m", "h", kNow), Error);
}

TEST(CaptionStore, TransitionTable) {
  using S = CaptionStatus;
  for (S to : {S::accepted, S::rejected_by_judge, S::rejected_by_human}) EXPECT_TRUE(is_allowed_transition(S::candidate, to));
  EXPECT_TRUE(is_allowed_transition(S::accepted, S::rejected_by_human));
  EXPECT_FALSE(is_allowed_transition(S::accepted, S::candidate));
  EXPECT_FALSE(is_allowed_transition(S::rejected_by_judge, S::accepted));
  EXPECT_FALSE(is_allowed_transition(S::rejected_by_human, S::accepted));
  EXPECT_FALSE(is_allowed_transition(S::candidate, S::candidate));
}

TEST(CaptionStore, FileIsSortedById) {
  TempDir dir;
  CaptionStore store(dir.path());
  for (int i = 0; i < 10; ++i) store.create("s", "scene-" + std::to_string(i), "t", "m", "h", kNow);
  auto lines = read_lines(dir / "captions/candidates.jsonl");
  std::vector<std::string> ids;
  for (const auto& l : lines) ids.push_back(nlohmann::json::parse(l)["caption_id"]);
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
  EXPECT_EQ(ids.size(), 10u);
}
