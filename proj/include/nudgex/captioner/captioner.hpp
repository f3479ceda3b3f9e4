#pragma once

#include "nudgex/catalog.hpp"
#include "nudgex/eo/scenes.hpp"
#include "nudgex/llm/chat.hpp"
#include "nudgex/raster/indices.hpp"
#include "nudgex/retry.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nudgex::captioner {

inline constexpr std::size_t kMaxShots = 8;
inline constexpr double kDefaultTemperature = 0.2;

struct Shot {
  std::string context;
  std::string caption;

  friend bool operator==(const Shot&, const Shot&) = default;
};

struct PromptBundle {
  std::string system_text;
  std::vector<Shot> shots;
  std::string dossier_text;
  std::vector<std::string> index_summaries;
  std::string image;  // PNG bytes
  std::string model_id;
  double temperature = kDefaultTemperature;

  /// Sorted-key JSON; the image is included as its base64 text.
  std::string canonical() const;
  /// SHA-256 hex of canonical().
  std::string prompt_hash() const;
};

/// Chat request for the bundle: system prompt, one user/assistant exchange
/// per shot, then a user turn with the site text, index summaries and the
/// RGB image.
llm::ChatRequest to_chat_request(const PromptBundle& bundle);

struct PromptConfig {
  std::string system_text;
  std::vector<Shot> shots;
  std::vector<std::string> indices = {"NDVI", "NDWI", "NDBI", "BSI", "IRONOX"};
  std::string model_id = "stub-captioner";
  double temperature = kDefaultTemperature;

  /// Shipped system prompt and shots.
  static PromptConfig defaults();
};

const std::string& default_system_prompt();
const std::vector<Shot>& default_shots();

/// Shots file: JSON array of {"context": ..., "caption": ...}.
std::vector<Shot> parse_shots(std::string_view text);
std::string render_shots(const std::vector<Shot>& shots);

/// First line of the dossier text handed to the model.
std::string site_header(const catalog::MiningSite& site);

struct AssembledPrompt {
  PromptBundle bundle;
  std::vector<std::string> warnings;
};

/// Requires an approved scene; throws precondition otherwise. A missing
/// dossier yields empty sections and a warning.
AssembledPrompt assemble_prompt(const catalog::MiningSite& site, const std::optional<catalog::SiteDossier>& dossier,
                                const eo::SceneAsset& scene, const raster::RasterGrid& grid,
                                const std::vector<raster::IndexProduct>& products, const PromptConfig& config);

/// Computes each named index on the grid.
std::vector<raster::IndexProduct> compute_products(const raster::RasterGrid& grid, const std::vector<std::string>& names,
                                                   const raster::IndexRegistry& registry);

enum class CaptionStatus { candidate, accepted, rejected_by_judge, rejected_by_human };
std::string_view to_string(CaptionStatus s);
CaptionStatus caption_status_from_string(std::string_view s);

/// candidate -> {accepted, rejected_by_judge, rejected_by_human}, plus the
/// human override accepted -> rejected_by_human.
bool is_allowed_transition(CaptionStatus from, CaptionStatus to);

struct CaptionCandidate {
  std::string caption_id;
  std::string site_id;
  std::string scene_id;
  std::string text;
  std::string model_id;
  std::string prompt_hash;
  Timestamp created_at{};
  CaptionStatus status = CaptionStatus::candidate;
  std::optional<std::string> reviewer;  // set by human review only
  std::optional<Timestamp> reviewed_at;
};

nlohmann::json to_json(const CaptionCandidate& c);
CaptionCandidate caption_from_json(const nlohmann::json& j);

/// `<root>/captions/candidates.jsonl`, one record per line sorted by
/// caption_id so the file does not depend on completion order.
class CaptionStore {
 public:
  explicit CaptionStore(fs::path data_root);

  /// Stores a new candidate; the id is derived from (scene, prompt hash,
  /// number of earlier candidates for that pair).
  CaptionCandidate create(std::string site_id, std::string scene_id, std::string text, std::string model_id,
                          std::string prompt_hash, Timestamp created_at);

  std::optional<CaptionCandidate> find(std::string_view caption_id) const;
  CaptionCandidate get(std::string_view caption_id) const;  // throws not_found
  std::vector<CaptionCandidate> list(std::optional<std::string_view> site_id = std::nullopt) const;
  std::vector<CaptionCandidate> with_status(CaptionStatus status) const;
  std::size_t count_for(std::string_view scene_id, std::string_view prompt_hash) const;
  std::size_t size() const;

  /// Compare-and-set on status; conflict when the current status differs
  /// from `expected`, precondition when the transition is not allowed.
  CaptionCandidate transition(std::string_view caption_id, CaptionStatus expected, CaptionStatus next);

  /// Records a human reviewer on an accepted caption; conflict if one is
  /// already recorded.
  CaptionCandidate confirm(std::string_view caption_id, std::string_view reviewer, Timestamp at);
  /// Human rejection from candidate or accepted.
  CaptionCandidate reject_by_human(std::string_view caption_id, std::string_view reviewer, Timestamp at);

 private:
  void flush() const;  // caller holds mutex_

  fs::path file_;
  mutable std::mutex mutex_;
  std::map<std::string, CaptionCandidate, std::less<>> captions_;
};

std::string make_caption_id(std::string_view scene_id, std::string_view prompt_hash, std::size_t ordinal);

struct GenerateOptions {
  RetryPolicy retry;
  Sleeper sleep = thread_sleeper();
  Clock clock = system_clock();
  std::map<std::string, std::string> tags;  // merged into the request
};

struct Generation {
  CaptionCandidate caption;
  int attempts = 0;
};

/// One provider call (retried on transport errors), stored as a candidate.
/// Empty or blank responses raise empty_response and store nothing.
Generation generate_caption(const PromptBundle& bundle, llm::ChatClient& client, CaptionStore& store,
                            std::string_view site_id, std::string_view scene_id, const GenerateOptions& options = {});

}  // namespace nudgex::captioner
