#include "nudgex/rag/ragstore.hpp"

#include "nudgex/error.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <mutex>
#include <regex>
#include <set>

#include <fmt/format.h>

namespace nudgex::rag {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "vectors.bin is written in native little-endian order");

double EmbeddingVector::norm() const {
  double s = 0.0;
  for (float v : values) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

void normalize(std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  if (s == 0.0) return;
  double inv = 1.0 / std::sqrt(s);
  for (float& x : v) x = static_cast<float>(x * inv);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

EmbeddingVector stub_embed(std::string_view text, std::size_t dimension) {
  if (dimension == 0) throw Error(Errc::argument, "embedding dimension must be positive");
  std::vector<double> acc(dimension, 0.0);
  auto tokens = tokenize(text);
  for (const auto& t : tokens) {
    std::uint64_t h = fnv1a64(t);
    acc[h % dimension] += (h >> 63) ? -1.0 : 1.0;
  }
  EmbeddingVector out;
  out.values.assign(dimension, 0.0f);
  double s = 0.0;
  for (double a : acc) s += a * a;
  if (s == 0.0) {
    // Tokens can cancel inside a bucket; only genuinely empty input is flagged.
    out.empty_input = tokens.empty();
    return out;
  }
  double inv = 1.0 / std::sqrt(s);
  for (std::size_t i = 0; i < dimension; ++i) out.values[i] = static_cast<float>(acc[i] * inv);
  return out;
}

std::vector<EmbeddingVector> StubEmbeddingClient::embed(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(stub_embed(t, dimension_));
  return out;
}

std::vector<EmbeddingVector> HttpEmbeddingClient::parse_response(std::string_view body, std::size_t expected,
                                                                 std::size_t dimension) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(Errc::format, fmt::format("embedding response is not JSON: {}", e.what()));
  }
  if (!j.contains("data") || !j["data"].is_array() || j["data"].size() != expected) {
    throw Error(Errc::format, fmt::format("embedding response must carry {} vectors", expected));
  }
  std::vector<EmbeddingVector> out;
  for (const auto& item : j["data"]) {
    EmbeddingVector v;
    v.values = item.at("embedding").get<std::vector<float>>();
    if (v.values.size() != dimension) {
      throw Error(Errc::config,
                  fmt::format("embedding model returned {} dimensions, index expects {}", v.values.size(), dimension));
    }
    normalize(v.values);
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<EmbeddingVector> HttpEmbeddingClient::embed(const std::vector<std::string>& texts) {
  std::string body = json{{"model", endpoint_.model}, {"input", texts}}.dump();
  auto res = with_retry(endpoint_.retry, [&] { return http::post(endpoint_.endpoint, endpoint_.path, body); }, sleep_);
  if (res.status != 200) {
    throw Error(Errc::transport, fmt::format("embedding provider returned HTTP {}", res.status));
  }
  return parse_response(res.body, texts.size(), endpoint_.dimension);
}

EmbeddingVector embed(std::string_view text, EmbeddingClient& client) {
  if (tokenize(text).empty()) {
    EmbeddingVector v;
    v.values.assign(client.dimension(), 0.0f);
    v.empty_input = true;
    return v;
  }
  auto out = client.embed({std::string(text)});
  if (out.size() != 1) throw Error(Errc::format, "embedding client returned the wrong number of vectors");
  if (out[0].dimension() != client.dimension()) {
    throw Error(Errc::config, fmt::format("embedding has {} dimensions, expected {}", out[0].dimension(),
                                          client.dimension()));
  }
  return std::move(out[0]);
}

// ---------------------------------------------------------------- records

json to_json(const ChunkRecord& r) {
  return {{"chunk_id", r.chunk_id}, {"caption_id", r.caption_id}, {"site_id", r.site_id}, {"country", r.country},
          {"site_name", r.site_name}, {"text", r.text}, {"payload", r.payload}};
}

ChunkRecord chunk_from_json(const json& j) {
  ChunkRecord r;
  r.chunk_id = j.at("chunk_id").get<std::string>();
  r.caption_id = j.value("caption_id", "");
  r.site_id = j.value("site_id", "");
  r.country = j.value("country", "");
  r.site_name = j.value("site_name", "");
  r.text = j.at("text").get<std::string>();
  if (j.contains("payload")) r.payload = j["payload"].get<std::map<std::string, std::string>>();
  return r;
}

std::string chunk_id_for(std::string_view caption_id) { return "chunk-" + std::string(caption_id); }

std::vector<std::string> identity_chunker(std::string_view text) { return {std::string(text)}; }

bool MetadataFilter::matches(const ChunkRecord& r) const {
  if (country && to_lower(*country) != to_lower(r.country)) return false;
  if (site_id && *site_id != r.site_id) return false;
  return true;
}

ChunkFilter MetadataFilter::predicate() const {
  if (empty()) return {};
  MetadataFilter copy = *this;
  return [copy](const ChunkRecord& r) { return copy.matches(r); };
}

// ---------------------------------------------------------------- index

VectorIndex::VectorIndex(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw Error(Errc::argument, "index dimension must be positive");
}

VectorIndex::VectorIndex(VectorIndex&& other) noexcept
    : dimension_(other.dimension_), records_(std::move(other.records_)), position_(std::move(other.position_)) {}

VectorIndex& VectorIndex::operator=(VectorIndex&& other) noexcept {
  if (this != &other) {
    std::unique_lock lock(mutex_);
    dimension_ = other.dimension_;
    records_ = std::move(other.records_);
    position_ = std::move(other.position_);
  }
  return *this;
}

std::size_t VectorIndex::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::size_t VectorIndex::upsert(ChunkRecord record) {
  if (record.vector.dimension() != dimension_) {
    throw Error(Errc::dimension,
                fmt::format("chunk '{}' has {} dimensions, index has {}", record.chunk_id, record.vector.dimension(),
                            dimension_));
  }
  if (record.chunk_id.empty()) throw Error(Errc::argument, "chunk_id is empty");
  if (trim(record.text).empty()) throw Error(Errc::argument, fmt::format("chunk '{}' has empty text", record.chunk_id));
  double n = record.vector.norm();
  if (std::abs(n - 1.0) > 1e-6) {
    throw Error(Errc::argument, fmt::format("chunk '{}' vector norm {} is not 1", record.chunk_id, n));
  }
  std::unique_lock lock(mutex_);
  if (auto it = position_.find(record.chunk_id); it != position_.end()) {
    records_[it->second] = std::move(record);
  } else {
    position_[record.chunk_id] = records_.size();
    records_.push_back(std::move(record));
  }
  return records_.size();
}

bool VectorIndex::remove(std::string_view chunk_id) {
  std::unique_lock lock(mutex_);
  auto it = position_.find(chunk_id);
  if (it == position_.end()) return false;
  std::size_t pos = it->second;
  records_.erase(records_.begin() + static_cast<std::ptrdiff_t>(pos));
  position_.erase(it);
  for (auto& [id, p] : position_) {
    if (p > pos) --p;
  }
  return true;
}

std::optional<ChunkRecord> VectorIndex::find(std::string_view chunk_id) const {
  std::shared_lock lock(mutex_);
  auto it = position_.find(chunk_id);
  if (it == position_.end()) return std::nullopt;
  return records_[it->second];
}

std::vector<ChunkRecord> VectorIndex::records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::vector<RetrievalHit> VectorIndex::search(std::span<const float> query, std::size_t k,
                                              const ChunkFilter& filter) const {
  if (k == 0) throw Error(Errc::argument, "k must be positive");
  if (query.size() != dimension_) {
    throw Error(Errc::dimension, fmt::format("query has {} dimensions, index has {}", query.size(), dimension_));
  }
  double qn = 0.0;
  for (float v : query) qn += static_cast<double>(v) * v;
  qn = std::sqrt(qn);

  std::shared_lock lock(mutex_);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const ChunkRecord& r = records_[i];
    if (filter && !filter(r)) continue;
    double dot = 0.0;
    const float* v = r.vector.values.data();
    for (std::size_t d = 0; d < dimension_; ++d) dot += static_cast<double>(query[d]) * v[d];
    scored.emplace_back(qn > 0.0 ? dot / qn : 0.0, i);
  }
  auto better = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return records_[a.second].chunk_id < records_[b.second].chunk_id;
  };
  std::size_t take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  std::vector<RetrievalHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) hits.push_back({records_[scored[i].second], scored[i].first});
  return hits;
}

void VectorIndex::save(const fs::path& dir) const {
  std::shared_lock lock(mutex_);
  std::string bin(kVectorFileMagic);
  auto put32 = [&](std::uint32_t v) { bin.append(reinterpret_cast<const char*>(&v), 4); };
  auto put64 = [&](std::uint64_t v) { bin.append(reinterpret_cast<const char*>(&v), 8); };
  put32(kVectorFileVersion);
  put32(static_cast<std::uint32_t>(dimension_));
  put64(records_.size());
  std::string lines;
  for (const auto& r : records_) {
    bin.append(reinterpret_cast<const char*>(r.vector.values.data()), dimension_ * sizeof(float));
    lines += to_json(r).dump() + "\n";
  }
  write_file_atomic(dir / "vectors.bin", bin);
  write_file_atomic(dir / "chunks.jsonl", lines);
}

VectorIndex VectorIndex::load(const fs::path& dir) {
  std::string bin = read_file(dir / "vectors.bin");
  constexpr std::size_t header = 4 + 4 + 4 + 8;
  if (bin.size() < header) throw ParseError(bin.size(), "vectors.bin header truncated");
  if (std::string_view(bin).substr(0, 4) != kVectorFileMagic) throw ParseError(0, "vectors.bin has a bad magic");
  std::uint32_t version, dim;
  std::uint64_t count;
  std::memcpy(&version, bin.data() + 4, 4);
  std::memcpy(&dim, bin.data() + 8, 4);
  std::memcpy(&count, bin.data() + 12, 8);
  if (version != kVectorFileVersion) {
    throw Error(Errc::unsupported_feature, fmt::format("vectors.bin version {} is not supported", version));
  }
  if (dim == 0) throw ParseError(8, "vectors.bin dimension is zero");
  std::size_t need = header + static_cast<std::size_t>(count) * dim * sizeof(float);
  if (bin.size() != need) {
    throw ParseError(std::min(bin.size(), need), fmt::format("vectors.bin holds {} bytes, header implies {}", bin.size(), need));
  }
  std::vector<std::string> lines = read_lines(dir / "chunks.jsonl");
  if (lines.size() != count) {
    throw Error(Errc::format, fmt::format("chunks.jsonl has {} records, vectors.bin has {}", lines.size(), count));
  }
  VectorIndex index(dim);
  for (std::size_t i = 0; i < count; ++i) {
    ChunkRecord r = chunk_from_json(json::parse(lines[i]));
    r.vector.values.resize(dim);
    std::memcpy(r.vector.values.data(), bin.data() + header + i * dim * sizeof(float), dim * sizeof(float));
    if (index.position_.count(r.chunk_id)) {
      throw Error(Errc::format, fmt::format("duplicate chunk '{}' in chunks.jsonl", r.chunk_id));
    }
    index.position_[r.chunk_id] = index.records_.size();
    index.records_.push_back(std::move(r));
  }
  return index;
}

VectorIndex VectorIndex::open(const fs::path& dir, std::size_t dimension) {
  if (!fs::exists(dir / "vectors.bin")) return VectorIndex(dimension);
  VectorIndex index = load(dir);
  if (index.dimension() != dimension) {
    throw Error(Errc::config, fmt::format("stored index has {} dimensions, configuration says {}", index.dimension(),
                                          dimension));
  }
  return index;
}

// ---------------------------------------------------------------- answers

json to_json(const RetrievalHit& h) {
  json j = to_json(h.chunk);
  j["score"] = h.score;
  return j;
}

json to_json(const RagAnswer& a) {
  json hits = json::array();
  for (const auto& h : a.hits_used) hits.push_back(to_json(h));
  return {{"question", a.question}, {"hits_used", std::move(hits)}, {"answer_text", a.answer_text},
          {"cited_site_ids", a.cited_site_ids}};
}

std::vector<std::string> extract_citations(std::string_view text, const std::vector<std::string>& allowed) {
  static const std::regex marker(R"(\[([a-z0-9-]{1,64})\])");
  std::set<std::string, std::less<>> allow(allowed.begin(), allowed.end());
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), marker); it != std::sregex_iterator(); ++it) {
    std::string id = (*it)[1].str();
    if (allow.count(id) && seen.insert(id).second) out.push_back(id);
  }
  return out;
}

llm::ChatRequest build_answer_request(std::string_view question, const std::vector<RetrievalHit>& hits,
                                      std::string_view model_id) {
  std::string system =
      "You answer questions about mining sites and their environmental impact. Use only the evidence below. "
      "Every time you rely on a piece of evidence, cite its site with the bracketed site id exactly as given, "
      "for example [site-id]. If the evidence does not answer the question, say so.";
  std::string user = fmt::format("Question: {}\n\nEvidence:\n", question);
  for (const auto& h : hits) {
    const ChunkRecord& c = h.chunk;
    std::string where = c.country;
    if (auto it = c.payload.find("latitude"); it != c.payload.end()) {
      where += fmt::format(", lat {}, lon {}", it->second, c.payload.count("longitude") ? c.payload.at("longitude") : "?");
    }
    user += fmt::format("[{}] {} ({}): {}\n", c.site_id, c.site_name, where, c.text);
  }
  llm::ChatRequest req;
  req.model = std::string(model_id);
  req.messages.push_back({"system", {llm::ContentPart::of_text(std::move(system))}});
  req.messages.push_back({"user", {llm::ContentPart::of_text(std::move(user))}});
  return req;
}

RagAnswer answer(std::string_view question, const VectorIndex& index, EmbeddingClient& embedder,
                 llm::ChatClient& generator, const AnswerOptions& options) {
  if (trim(question).empty()) throw Error(Errc::argument, "question is empty");
  if (options.k == 0) throw Error(Errc::argument, "k must be positive");
  EmbeddingVector q = embed(question, embedder);
  RagAnswer out;
  out.question = std::string(question);
  out.hits_used = index.search(q.values, options.k, options.filter.predicate());
  if (out.hits_used.empty()) {
    throw Error(Errc::grounding_unavailable, options.filter.empty()
                                                 ? std::string("the index holds no captions to ground an answer")
                                                 : std::string("no indexed captions match the filter"));
  }
  llm::ChatRequest req = build_answer_request(question, out.hits_used, options.model_id);
  req.temperature = options.temperature;
  out.answer_text = with_retry(options.retry, [&] { return generator.complete(req); }, options.sleep);
  if (trim(out.answer_text).empty()) throw Error(Errc::empty_response, "generator returned no text");
  std::vector<std::string> ids;
  for (const auto& h : out.hits_used) ids.push_back(h.chunk.site_id);
  out.cited_site_ids = extract_citations(out.answer_text, ids);
  return out;
}

}  // namespace nudgex::rag
