#include "nudgex/error.hpp"
#include "nudgex/rag/ragstore.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cctype>
#include <random>
#include <set>

#include <fmt/format.h>

using namespace nudgex;
using namespace nudgex::rag;
using nxtest::TempDir;

namespace {

/// Bag-of-words hashing written out from the description, in double.
std::vector<double> oracle_embed(const std::string& text, std::size_t dim) {
  std::vector<double> acc(dim, 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : token) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    acc[h % dim] += (h >> 63) ? -1.0 : 1.0;
    token.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
    }
  }
  flush();
  double n = 0;
  for (double v : acc) n += v * v;
  n = std::sqrt(n);
  if (n > 0) {
    for (double& v : acc) v /= n;
  }
  return acc;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return dot / std::sqrt(na * nb);
}

ChunkRecord chunk(std::string id, std::vector<float> v, std::string site = "s", std::string country = "AU") {
  ChunkRecord r;
  r.chunk_id = std::move(id);
  r.caption_id = "cap-" + r.chunk_id;
  r.site_id = std::move(site);
  r.country = std::move(country);
  r.site_name = "Site";
  r.text = "text of " + r.chunk_id;
  r.vector.values = std::move(v);
  return r;
}

std::vector<float> axis(std::size_t dim, std::size_t i) {
  std::vector<float> v(dim, 0.0f);
  v[i] = 1.0f;
  return v;
}

}  // namespace

TEST(Embed, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Embed, MatchesOracle) {
  for (const char* text : {"copper", "Open-pit COPPER mine, tailings & acid drainage", "x y z 1 2 3"}) {
    auto e = stub_embed(text, 384);
    auto o = oracle_embed(text, 384);
    for (std::size_t i = 0; i < 384; ++i) ASSERT_NEAR(e.values[i], o[i], 1e-7) << text;
  }
}

TEST(Embed, Examples) {
  EXPECT_EQ(stub_embed("copper copper").values, stub_embed("copper").values);
  EXPECT_EQ(stub_embed("tailings pond beside the pit").values, stub_embed("pit the beside pond tailings").values);
  auto empty = stub_embed("");
  EXPECT_TRUE(empty.empty_input);
  EXPECT_EQ(empty.norm(), 0.0);
  EXPECT_TRUE(stub_embed(" ,;- ").empty_input);
  auto a = stub_embed("Open pit copper mine with tailings ponds and acid drainage");
  auto b = stub_embed("Revegetated uranium site beside a flooded quarry lake");
  EXPECT_FALSE(a.empty_input);
  EXPECT_NEAR(a.norm(), 1.0, 1e-6);
  EXPECT_LT(cosine(a.values, b.values), 0.5);
  EXPECT_NEAR(cosine(a.values, stub_embed("Open pit copper mine with tailings ponds and acid drainage").values), 1.0,
              1e-9);
}

TEST(Embed, ClientShortCircuitsEmptyText) {
  StubEmbeddingClient client(16);
  auto v = embed("", client);
  EXPECT_TRUE(v.empty_input);
  EXPECT_EQ(v.dimension(), 16u);
}

TEST(Embed, HttpResponseParsing) {
  auto v = HttpEmbeddingClient::parse_response(R"({"data":[{"embedding":[3,4]}]})", 1, 2);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NEAR(v[0].values[0], 0.6, 1e-6);
  try {
    HttpEmbeddingClient::parse_response(R"({"data":[{"embedding":[1,2,3]}]})", 1, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
  }
}

TEST(Index, UpsertSemantics) {
  VectorIndex idx(4);
  EXPECT_EQ(idx.upsert(chunk("a", axis(4, 0))), 1u);
  EXPECT_EQ(idx.upsert(chunk("b", axis(4, 1))), 2u);
  auto replaced = chunk("a", axis(4, 2));
  replaced.text = "new text";
  EXPECT_EQ(idx.upsert(replaced), 2u);
  EXPECT_EQ(idx.find("a")->text, "new text");
  try {
    idx.upsert(chunk("c", std::vector<float>(3, 0.0f)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::dimension);
  }
  EXPECT_THROW(idx.upsert(chunk("d", {0.5f, 0.5f, 0.0f, 0.0f})), Error);
  auto blank = chunk("e", axis(4, 3));
  blank.text = "";
  EXPECT_THROW(idx.upsert(blank), Error);
  EXPECT_TRUE(idx.remove("a"));
  EXPECT_FALSE(idx.remove("a"));
  EXPECT_EQ(idx.size(), 1u);
}

TEST(Index, WrongDimensionAt384) {
  VectorIndex idx(384);
  std::mt19937_64 rng(1);
  EXPECT_THROW(idx.upsert(chunk("a", nxtest::random_unit(rng, 383))), Error);
}

TEST(Index, SelfAndOrthogonalScores) {
  VectorIndex idx(8);
  idx.upsert(chunk("only", axis(8, 3)));
  auto self = idx.search(axis(8, 3), 1);
  ASSERT_EQ(self.size(), 1u);
  EXPECT_NEAR(self[0].score, 1.0, 1e-6);
  EXPECT_NEAR(idx.search(axis(8, 4), 1)[0].score, 0.0, 1e-6);
  EXPECT_THROW(idx.search(axis(8, 3), 0), Error);
  EXPECT_TRUE(VectorIndex(8).search(axis(8, 1), 3).empty());
}

TEST(Index, TiesBreakByChunkId) {
  VectorIndex idx(4);
  idx.upsert(chunk("zeta", axis(4, 0)));
  idx.upsert(chunk("alpha", axis(4, 0)));
  idx.upsert(chunk("mid", axis(4, 0)));
  auto hits = idx.search(axis(4, 0), 3);
  EXPECT_EQ(hits[0].chunk.chunk_id, "alpha");
  EXPECT_EQ(hits[1].chunk.chunk_id, "mid");
  EXPECT_EQ(hits[2].chunk.chunk_id, "zeta");
}

TEST(Index, MatchesBruteForce) {
  std::mt19937_64 rng(42);
  const std::size_t dim = 64;
  VectorIndex idx(dim);
  std::vector<std::vector<float>> data;
  std::vector<std::string> ids;
  for (int i = 0; i < 300; ++i) {
    data.push_back(nxtest::random_unit(rng, dim));
    ids.push_back(fmt::format("c{:04d}", i));
    idx.upsert(chunk(ids.back(), data.back()));
  }
  for (int q = 0; q < 30; ++q) {
    auto query = nxtest::random_unit(rng, dim);
    for (std::size_t k : {1, 5, 10}) {
      auto got = idx.search(query, k);
      auto want = nxtest::brute_force_topk(data, ids, query, k);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < k; ++i) {
        ASSERT_EQ(got[i].chunk.chunk_id, ids[want[i].index]);
        ASSERT_NEAR(got[i].score, want[i].score, 1e-6);
      }
    }
  }
}

TEST(Index, MetadataFilter) {
  VectorIndex idx(4);
  idx.upsert(chunk("a", axis(4, 0), "s1", "AU"));
  idx.upsert(chunk("b", axis(4, 0), "s2", "CA"));
  idx.upsert(chunk("c", axis(4, 1), "s3", "AU"));
  MetadataFilter f;
  f.country = "au";
  auto hits = idx.search(axis(4, 0), 5, f.predicate());
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].chunk.chunk_id, "a");
  EXPECT_EQ(hits[1].chunk.chunk_id, "c");
  f = {};
  f.site_id = "s2";
  EXPECT_EQ(idx.search(axis(4, 0), 5, f.predicate()).size(), 1u);
}

TEST(Index, PersistenceRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(5);
  VectorIndex idx(32);
  for (int i = 0; i < 50; ++i) {
    auto c = chunk(fmt::format("c{}", i), nxtest::random_unit(rng, 32));
    c.payload["scene_id"] = "scene-" + std::to_string(i);
    idx.upsert(c);
  }
  idx.save(dir.path());
  auto loaded = VectorIndex::load(dir.path());
  EXPECT_EQ(loaded.size(), 50u);
  EXPECT_EQ(loaded.find("c7")->payload.at("scene_id"), "scene-7");
  for (int q = 0; q < 20; ++q) {
    auto query = nxtest::random_unit(rng, 32);
    auto a = idx.search(query, 5);
    auto b = loaded.search(query, 5);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(a[i].chunk.chunk_id, b[i].chunk.chunk_id);
      EXPECT_EQ(a[i].score, b[i].score);
    }
  }
  auto bytes = read_file(dir / "vectors.bin");
  EXPECT_EQ(bytes.substr(0, 4), "NXVI");
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 8 + 50u * 32 * 4);
  idx.save(dir.path());
  EXPECT_EQ(read_file(dir / "vectors.bin"), bytes);

  bytes[0] = 'X';
  write_file_atomic(dir / "vectors.bin", bytes);
  EXPECT_THROW(VectorIndex::load(dir.path()), ParseError);
  EXPECT_EQ(VectorIndex::open(dir / "absent", 32).size(), 0u);
}

TEST(Citations, FilteredAndOrdered) {
  auto c = extract_citations("See [b-site] and [a-site], again [b-site], and [made-up] or [Bad Id].", {"a-site", "b-site"});
  EXPECT_EQ(c, (std::vector<std::string>{"b-site", "a-site"}));
}

TEST(Answer, KOneAndGroundingUnavailable) {
  VectorIndex idx(384);
  StubEmbeddingClient embedder;
  for (auto [id, site, country, text] : std::vector<std::tuple<std::string, std::string, std::string, std::string>>{
           {"c1", "north-pit", "AU", "Copper pit with tailings."},
           {"c2", "south-pit", "AU", "Gold pit with acid drainage."},
           {"c3", "west-pit", "CA", "Nickel smelter slag heaps."}}) {
    auto r = chunk(id, embed(text, embedder).values, site, country);
    r.text = text;
    idx.upsert(r);
  }
  llm::GroundedEchoChatClient gen;
  AnswerOptions o;
  o.sleep = {};
  o.k = 1;
  auto a = answer("copper tailings", idx, embedder, gen, o);
  ASSERT_EQ(a.hits_used.size(), 1u);
  EXPECT_EQ(a.hits_used[0].chunk.site_id, "north-pit");
  EXPECT_EQ(a.cited_site_ids, std::vector<std::string>{"north-pit"});

  o.k = 5;
  o.filter.country = "ZZ";
  llm::ScriptedChatClient never({std::string("unused")});
  try {
    answer("copper", idx, embedder, never, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::grounding_unavailable);
  }
  EXPECT_EQ(never.calls(), 0);
}

TEST(Answer, CitationsAreSubsetOfHits) {
  VectorIndex idx(384);
  StubEmbeddingClient embedder;
  for (int i = 0; i < 6; ++i) {
    auto text = fmt::format("Mine number {} shows pit number {} and waste rock", i, i);
    auto r = chunk(fmt::format("c{}", i), embed(text, embedder).values, fmt::format("site-{}", i), "AU");
    r.text = text;
    idx.upsert(r);
  }
  // A generator that invents a citation outside the evidence.
  llm::ScriptedChatClient liar({std::string("[site-0] [site-1] [site-9] [not-a-site]")});
  AnswerOptions o;
  o.sleep = {};
  o.k = 2;
  auto a = answer("mine pit waste", idx, embedder, liar, o);
  std::set<std::string> hit_sites;
  for (const auto& h : a.hits_used) hit_sites.insert(h.chunk.site_id);
  for (const auto& c : a.cited_site_ids) EXPECT_TRUE(hit_sites.count(c)) << c;
  auto req = liar.requests().at(0);
  std::string prompt;
  for (const auto& m : req.messages) prompt += m.text();
  for (const auto& h : a.hits_used) EXPECT_NE(prompt.find("[" + h.chunk.site_id + "]"), std::string::npos);
}
