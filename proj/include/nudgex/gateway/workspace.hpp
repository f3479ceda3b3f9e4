#pragma once

#include "nudgex/captioner/captioner.hpp"
#include "nudgex/catalog.hpp"
#include "nudgex/eo/scenes.hpp"
#include "nudgex/gateway/config.hpp"
#include "nudgex/judge/judge.hpp"
#include "nudgex/llm/chat.hpp"
#include "nudgex/rag/ragstore.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nudgex::gateway {

enum class Stage { ingest, acquire, caption, judge, index };
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

enum class Outcome { ok, skip, error };
std::string_view to_string(Outcome o);

struct ItemOutcome {
  std::string item;
  Outcome outcome = Outcome::ok;
  std::string reason;
};

struct Scope {
  std::optional<std::string> site_id;

  bool includes(std::string_view site) const { return !site_id || *site_id == site; }
};

struct PipelineRun {
  std::string run_id;
  Stage stage = Stage::ingest;
  Scope scope;
  Timestamp started_at{};
  Timestamp finished_at{};
  std::vector<ItemOutcome> items;

  bool ok() const;
  std::size_t count(Outcome o) const;
};

nlohmann::json to_json(const PipelineRun& run);

/// Providers the pipeline talks to. Tests inject stubs; make_providers
/// builds them from configuration and environment secrets.
struct Providers {
  std::shared_ptr<eo::EoProvider> eo;
  std::shared_ptr<llm::ChatClient> captioner;
  std::shared_ptr<llm::ChatClient> judge;
  std::shared_ptr<llm::ChatClient> generator;
  std::shared_ptr<rag::EmbeddingClient> embedder;
  Sleeper sleep = thread_sleeper();
};

Providers make_providers(const ApiConfig& config);

/// Exclusive per data root (flock on `<root>/.lock`); busy error when held.
class RunLock {
 public:
  explicit RunLock(const fs::path& data_root);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

/// Everything under one data root:
///   sites.jsonl, dossiers/            catalog
///   scenes/<id>/{bands.tif,meta.json} acquisitions
///   captions/{candidates,scores}.jsonl
///   pairs/<site>/<caption>.{png,json} accepted image-caption pairs
///   rag/{vectors.bin,chunks.jsonl}
/// The CLI and the HTTP server both go through this class.
class Workspace {
 public:
  Workspace(ApiConfig config, Providers providers);

  const ApiConfig& config() const { return config_; }
  catalog::Catalog& catalog() { return catalog_; }
  eo::SceneStore& scenes() { return scenes_; }
  captioner::CaptionStore& captions() { return captions_; }
  judge::ScoreStore& scores() { return scores_; }
  const rag::VectorIndex& index() const { return index_; }

  PipelineRun ingest(const fs::path& sites_file, const std::optional<fs::path>& dossiers_dir = std::nullopt);
  PipelineRun acquire(const Scope& scope = {});
  PipelineRun caption(const Scope& scope = {});
  PipelineRun judge(const Scope& scope = {});
  PipelineRun rag_index(const Scope& scope = {});
  /// acquire, caption, judge or index.
  PipelineRun run_stage(Stage stage, const Scope& scope = {});

  eo::SceneAsset review_scene(std::string_view scene_id, std::string_view verdict, std::string_view reviewer);
  /// "approve" records a reviewer on an accepted caption; "reject" moves a
  /// candidate or accepted caption to rejected_by_human and withdraws its
  /// pair and chunk.
  captioner::CaptionCandidate review_caption(std::string_view caption_id, std::string_view verdict,
                                             std::string_view reviewer);

  rag::RagAnswer query(std::string_view question, std::optional<std::size_t> k = std::nullopt,
                       std::optional<std::string> country = std::nullopt);

  std::string scene_rgb_png(std::string_view scene_id) const;
  std::string scene_index_png(std::string_view scene_id, std::string_view index_name) const;

  captioner::PromptConfig prompt_config() const;
  fs::path pair_path(std::string_view site_id, std::string_view caption_id, std::string_view ext) const;

 private:
  PipelineRun begin(Stage stage, const Scope& scope) const;
  void finish(PipelineRun& run) const;
  void export_pair(const captioner::CaptionCandidate& caption);
  void withdraw(const captioner::CaptionCandidate& caption);
  llm::ChatClient& require(const std::shared_ptr<llm::ChatClient>& client, std::string_view what) const;
  RetryPolicy retry_for(const ProviderConfig& p) const;

  ApiConfig config_;
  Providers providers_;
  Clock clock_;
  catalog::Catalog catalog_;
  eo::SceneStore scenes_;
  captioner::CaptionStore captions_;
  judge::ScoreStore scores_;
  rag::VectorIndex index_;
  std::mutex index_write_;
};

}  // namespace nudgex::gateway
