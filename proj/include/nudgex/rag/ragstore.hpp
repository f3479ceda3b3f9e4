#pragma once

#include "nudgex/http.hpp"
#include "nudgex/llm/chat.hpp"
#include "nudgex/retry.hpp"
#include "nudgex/util.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace nudgex::rag {

inline constexpr std::size_t kDefaultDimension = 384;
inline constexpr std::size_t kDefaultK = 5;

struct EmbeddingVector {
  std::vector<float> values;
  bool empty_input = false;  // only then may the vector be all zero

  std::size_t dimension() const { return values.size(); }
  double norm() const;
};

/// Scales to unit length in place; an all-zero vector is left as is.
void normalize(std::vector<float>& v);

/// Offline embedding: lowercase, split on non-alphanumeric runs, FNV-1a 64
/// per token, bucket h mod D, sign from bit 63, accumulate, L2-normalize.
EmbeddingVector stub_embed(std::string_view text, std::size_t dimension = kDefaultDimension);

std::uint64_t fnv1a64(std::string_view bytes);
std::vector<std::string> tokenize(std::string_view text);

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

class StubEmbeddingClient : public EmbeddingClient {
 public:
  explicit StubEmbeddingClient(std::size_t dimension = kDefaultDimension) : dimension_(dimension) {}
  std::size_t dimension() const override { return dimension_; }
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

 private:
  std::size_t dimension_;
};

struct EmbeddingEndpoint {
  http::Endpoint endpoint;  // token from NUDGEX_EMBED_API_KEY
  std::string path = "/embeddings";
  std::string model = "all-MiniLM-L6-v2";
  std::size_t dimension = kDefaultDimension;
  RetryPolicy retry;
};

/// POST {model, input:[text...]} -> {data:[{embedding:[...]}...]}. A wrong
/// dimensionality is a config error.
class HttpEmbeddingClient : public EmbeddingClient {
 public:
  explicit HttpEmbeddingClient(EmbeddingEndpoint endpoint, Sleeper sleep = thread_sleeper())
      : endpoint_(std::move(endpoint)), sleep_(std::move(sleep)) {}
  std::size_t dimension() const override { return endpoint_.dimension; }
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

  static std::vector<EmbeddingVector> parse_response(std::string_view body, std::size_t expected,
                                                     std::size_t dimension);

 private:
  EmbeddingEndpoint endpoint_;
  Sleeper sleep_;
};

/// Empty or all-separator text gives the flagged zero vector without a
/// provider call.
EmbeddingVector embed(std::string_view text, EmbeddingClient& client);

struct ChunkRecord {
  std::string chunk_id;
  std::string caption_id;
  std::string site_id;
  std::string country;
  std::string site_name;
  std::string text;
  EmbeddingVector vector;
  std::map<std::string, std::string> payload;
};

/// Metadata of a chunk as stored in chunks.jsonl (the vector lives in
/// vectors.bin).
nlohmann::json to_json(const ChunkRecord& r);
ChunkRecord chunk_from_json(const nlohmann::json& j);

std::string chunk_id_for(std::string_view caption_id);

/// One chunk per caption; the hook exists so a splitter can be dropped in.
using Chunker = std::function<std::vector<std::string>(std::string_view)>;
std::vector<std::string> identity_chunker(std::string_view text);

struct RetrievalHit {
  ChunkRecord chunk;
  double score = 0.0;
};

using ChunkFilter = std::function<bool(const ChunkRecord&)>;

struct MetadataFilter {
  std::optional<std::string> country;
  std::optional<std::string> site_id;

  bool empty() const { return !country && !site_id; }
  bool matches(const ChunkRecord& r) const;
  ChunkFilter predicate() const;
};

/// Exact cosine index. Readers share a lock and writers take it exclusively,
/// so a search that has started sees the index as it was before any
/// concurrent upsert.
class VectorIndex {
 public:
  explicit VectorIndex(std::size_t dimension = kDefaultDimension);
  VectorIndex(const VectorIndex&) = delete;
  VectorIndex& operator=(const VectorIndex&) = delete;
  VectorIndex(VectorIndex&& other) noexcept;
  VectorIndex& operator=(VectorIndex&& other) noexcept;

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const;

  /// Insert or replace by chunk_id; returns the count after the call.
  /// Rejects wrong dimensionality, empty text and non-unit vectors.
  std::size_t upsert(ChunkRecord record);
  bool remove(std::string_view chunk_id);
  std::optional<ChunkRecord> find(std::string_view chunk_id) const;
  std::vector<ChunkRecord> records() const;  // insertion order

  /// Top-k by cosine, score descending then chunk_id ascending. k == 0 is an
  /// argument error; an empty index gives no hits.
  std::vector<RetrievalHit> search(std::span<const float> query, std::size_t k, const ChunkFilter& filter = {}) const;

  /// `<dir>/vectors.bin` and `<dir>/chunks.jsonl`.
  void save(const fs::path& dir) const;
  static VectorIndex load(const fs::path& dir);
  /// load() when the files exist, otherwise an empty index.
  static VectorIndex open(const fs::path& dir, std::size_t dimension);

 private:
  std::size_t dimension_;
  mutable std::shared_mutex mutex_;
  std::vector<ChunkRecord> records_;
  std::map<std::string, std::size_t, std::less<>> position_;
};

inline constexpr std::string_view kVectorFileMagic = "NXVI";
inline constexpr std::uint32_t kVectorFileVersion = 1;

struct RagAnswer {
  std::string question;
  std::vector<RetrievalHit> hits_used;
  std::string answer_text;
  std::vector<std::string> cited_site_ids;
};

nlohmann::json to_json(const RetrievalHit& h);
nlohmann::json to_json(const RagAnswer& a);

/// Bracketed [site-id] markers in order of first appearance, restricted to
/// `allowed`.
std::vector<std::string> extract_citations(std::string_view text, const std::vector<std::string>& allowed);

llm::ChatRequest build_answer_request(std::string_view question, const std::vector<RetrievalHit>& hits,
                                      std::string_view model_id);

struct AnswerOptions {
  std::size_t k = kDefaultK;
  MetadataFilter filter;
  std::string model_id = "stub-generator";
  double temperature = 0.2;
  RetryPolicy retry;
  Sleeper sleep = thread_sleeper();
};

/// Embeds the question, retrieves, and asks the chat model for a cited
/// answer. No hits means grounding_unavailable and no model call.
RagAnswer answer(std::string_view question, const VectorIndex& index, EmbeddingClient& embedder,
                 llm::ChatClient& generator, const AnswerOptions& options = {});

}  // namespace nudgex::rag
