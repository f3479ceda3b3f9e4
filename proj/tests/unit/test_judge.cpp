#include "nudgex/error.hpp"
#include "nudgex/judge/judge.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace nudgex;
using namespace nudgex::judge;
using nxtest::TempDir;

namespace {

const auto kNow = parse_timestamp("2025-01-15T12:00:00Z");

JudgeOptions quiet() {
  JudgeOptions o;
  o.sleep = {};
  o.clock = fixed_clock(kNow);
  return o;
}

std::string score_json(const Scores& s) {
  nlohmann::json j;
  for (std::size_t i = 0; i < 5; ++i) j["scores"][std::string(kDimensionNames[i])] = s[i];
  j["rationale"] = "fine";
  return j.dump();
}

}  // namespace

TEST(Gate, BoundaryCases) {
  auto r = Rubric::defaults();
  EXPECT_TRUE(gate({4, 4, 4, 4, 4}, r));
  EXPECT_TRUE(gate({5, 5, 5, 5, 5}, r));
  EXPECT_FALSE(gate({3, 3, 3, 3, 3}, r));
  EXPECT_FALSE(gate({5, 5, 5, 5, 2}, r));
  EXPECT_TRUE(gate({5, 5, 3, 3, 4}, r));
  EXPECT_FALSE(gate({5, 4, 3, 3, 4}, r));
}

TEST(Gate, ExhaustiveAgainstLonghandRule) {
  auto r = Rubric::defaults();
  int count = 0;
  Scores s;
  for (s[0] = 1; s[0] <= 5; ++s[0])
    for (s[1] = 1; s[1] <= 5; ++s[1])
      for (s[2] = 1; s[2] <= 5; ++s[2])
        for (s[3] = 1; s[3] <= 5; ++s[3])
          for (s[4] = 1; s[4] <= 5; ++s[4]) {
            ++count;
            ASSERT_EQ(gate(s, r), nxtest::gate_oracle(s));
          }
  EXPECT_EQ(count, 3125);
}

TEST(Rubric, Validation) {
  auto r = Rubric::defaults();
  EXPECT_NO_THROW(r.validate());
  r.theta_min = 5;
  EXPECT_THROW(r.validate(), Error);
  r = Rubric::defaults();
  r.theta_avg = 6;
  EXPECT_THROW(r.validate(), Error);
  r = Rubric::defaults();
  std::swap(r.dimensions[0], r.dimensions[1]);
  EXPECT_THROW(r.validate(), Error);
}

TEST(Parse, StrictObject) {
  auto j = parse_judge_response(score_json({4, 5, 3, 4, 5}));
  EXPECT_EQ(j.scores, (Scores{4, 5, 3, 4, 5}));
  EXPECT_EQ(j.rationale, "fine");
}

TEST(Parse, EmbeddedObject) {
  auto j = parse_judge_response("Here you go: " + score_json({4, 4, 4, 4, 4}) + " Hope that helps {!}");
  EXPECT_EQ(j.scores, (Scores{4, 4, 4, 4, 4}));
}

TEST(Parse, ExtractionHandlesBracesInStrings) {
  std::string text = R"(x {"a":"}{\"","b":{"c":1}} y {"z":2})";
  auto obj = extract_json_object(text);
  ASSERT_TRUE(obj);
  EXPECT_EQ(*obj, R"({"a":"}{\"","b":{"c":1}})");
  EXPECT_FALSE(extract_json_object("no braces here"));
  EXPECT_FALSE(extract_json_object("{ unterminated"));
}

TEST(Parse, Rejections) {
  auto expect_format = [](const std::string& text) {
    try {
      parse_judge_response(text);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::judge_format) << text;
    }
  };
  expect_format(score_json({6, 4, 4, 4, 4}));
  expect_format(score_json({0, 4, 4, 4, 4}));
  expect_format("I liked it.");
  expect_format(R"({"scores":{"environmental_focus":4}})");
  auto j = nlohmann::json::parse(score_json({4, 4, 4, 4, 4}));
  j["scores"]["vibes"] = 5;
  expect_format(j.dump());
  j = nlohmann::json::parse(score_json({4, 4, 4, 4, 4}));
  j["scores"]["conciseness"] = 4.5;
  expect_format(j.dump());
  j["scores"]["conciseness"] = "4";
  expect_format(j.dump());
  j["scores"]["conciseness"] = 4.0;
  EXPECT_NO_THROW(parse_judge_response(j.dump()));
}

TEST(Score, AllFivesAccepted) {
  TempDir dir;
  captioner::CaptionStore captions(dir.path());
  ScoreStore scores(dir.path());
  auto c = captions.create("s", "scene", "caption", "m", "h", kNow);
  llm::StubJudgeClient client;
  auto s = judge_caption(c.caption_id, captions, scores, Rubric::defaults(), client, quiet());
  EXPECT_TRUE(s.passed);
  EXPECT_EQ(s.sum, 25);
  EXPECT_DOUBLE_EQ(s.average(), 5.0);
  EXPECT_EQ(captions.get(c.caption_id).status, captioner::CaptionStatus::accepted);
  ASSERT_TRUE(scores.find(c.caption_id));
}

TEST(Score, LowMinimumRejects) {
  TempDir dir;
  captioner::CaptionStore captions(dir.path());
  ScoreStore scores(dir.path());
  auto c = captions.create("s", "scene", "caption", "m", "h", kNow);
  llm::StubJudgeClient client;
  client.set_scores(c.caption_id, {5, 5, 5, 5, 2});
  auto s = judge_caption(c.caption_id, captions, scores, Rubric::defaults(), client, quiet());
  EXPECT_DOUBLE_EQ(s.average(), 4.4);
  EXPECT_EQ(s.min_score(), 2);
  EXPECT_FALSE(s.passed);
  EXPECT_EQ(captions.get(c.caption_id).status, captioner::CaptionStatus::rejected_by_judge);
}

TEST(Score, NonJsonTwiceIsJudgeFormat) {
  TempDir dir;
  captioner::CaptionStore captions(dir.path());
  ScoreStore scores(dir.path());
  auto c = captions.create("s", "scene", "caption", "m", "h", kNow);
  llm::ScriptedChatClient client({std::string("great caption"), std::string("still great")});
  try {
    judge_caption(c.caption_id, captions, scores, Rubric::defaults(), client, quiet());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::judge_format);
  }
  EXPECT_EQ(client.calls(), 2);
  EXPECT_EQ(captions.get(c.caption_id).status, captioner::CaptionStatus::candidate);
  EXPECT_EQ(scores.size(), 0u);
}

TEST(Score, SecondAttemptParses) {
  TempDir dir;
  captioner::CaptionStore captions(dir.path());
  ScoreStore scores(dir.path());
  auto c = captions.create("s", "scene", "caption", "m", "h", kNow);
  llm::ScriptedChatClient client({std::string("hmm"), score_json({4, 4, 4, 4, 4})});
  auto s = judge_caption(c.caption_id, captions, scores, Rubric::defaults(), client, quiet());
  EXPECT_TRUE(s.passed);
  EXPECT_EQ(client.calls(), 2);
}

TEST(Score, OnlyCandidatesAreScored) {
  TempDir dir;
  captioner::CaptionStore captions(dir.path());
  auto c = captions.create("s", "scene", "caption", "m", "h", kNow);
  captions.transition(c.caption_id, captioner::CaptionStatus::candidate, captioner::CaptionStatus::accepted);
  llm::StubJudgeClient client;
  try {
    score_caption(captions.get(c.caption_id), Rubric::defaults(), client, quiet());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::precondition);
  }
}

TEST(Score, JudgeRequestIsTextOnlyAndHidesThresholds) {
  captioner::CaptionCandidate c;
  c.caption_id = "cap-1";
  c.text = "Tailings visible.";
  auto req = build_judge_request(c, Rubric::defaults(), "j");
  EXPECT_EQ(req.image_count(), 0u);
  EXPECT_DOUBLE_EQ(req.temperature, 0.0);
  std::string all;
  for (const auto& m : req.messages) all += m.text();
  EXPECT_NE(all.find("Tailings visible."), std::string::npos);
  for (auto name : kDimensionNames) EXPECT_NE(all.find(name), std::string::npos);
  EXPECT_EQ(all.find("4.0"), std::string::npos);
}

TEST(ScoreStore, PersistsAndReloads) {
  TempDir dir;
  {
    ScoreStore store(dir.path());
    JudgeScore s;
    s.caption_id = "cap-b";
    s.scores = {4, 4, 4, 4, 5};
    s.sum = 21;
    s.passed = true;
    s.scored_at = kNow;
    store.put(s);
    s.caption_id = "cap-a";
    store.put(s);
  }
  ScoreStore again(dir.path());
  ASSERT_EQ(again.size(), 2u);
  EXPECT_EQ(again.list()[0].caption_id, "cap-a");
  auto j = to_json(*again.find("cap-b"));
  EXPECT_DOUBLE_EQ(j["average"].get<double>(), 4.2);
  EXPECT_EQ(score_from_json(j).scores, (Scores{4, 4, 4, 4, 5}));
}
