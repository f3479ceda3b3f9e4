#include "nudgex/gateway/workspace.hpp"

#include "nudgex/error.hpp"
#include "nudgex/raster/geotiff.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <set>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>

namespace nudgex::gateway {

using nlohmann::json;
using captioner::CaptionCandidate;
using captioner::CaptionStatus;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::acquire: return "acquire";
    case Stage::caption: return "caption";
    case Stage::judge: return "judge";
    case Stage::index: return "index";
  }
  return "ingest";
}

Stage stage_from_string(std::string_view s) {
  if (s == "ingest") return Stage::ingest;
  if (s == "acquire") return Stage::acquire;
  if (s == "caption") return Stage::caption;
  if (s == "judge") return Stage::judge;
  if (s == "index" || s == "rag-index") return Stage::index;
  throw Error(Errc::argument, fmt::format("unknown stage '{}'", s));
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::ok: return "ok";
    case Outcome::skip: return "skip";
    case Outcome::error: return "error";
  }
  return "ok";
}

bool PipelineRun::ok() const { return count(Outcome::error) == 0; }

std::size_t PipelineRun::count(Outcome o) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [o](const ItemOutcome& i) { return i.outcome == o; }));
}

json to_json(const PipelineRun& run) {
  json items = json::array();
  for (const auto& i : run.items) {
    json j{{"item", i.item}, {"outcome", to_string(i.outcome)}};
    if (!i.reason.empty()) j["reason"] = i.reason;
    items.push_back(std::move(j));
  }
  return {{"run_id", run.run_id},
          {"stage", to_string(run.stage)},
          {"scope", run.scope.site_id ? json(*run.scope.site_id) : json(nullptr)},
          {"started_at", format_timestamp(run.started_at)},
          {"finished_at", format_timestamp(run.finished_at)},
          {"ok", run.ok()},
          {"counts",
           {{"ok", run.count(Outcome::ok)}, {"skip", run.count(Outcome::skip)}, {"error", run.count(Outcome::error)}}},
          {"items", std::move(items)}};
}

// ---------------------------------------------------------------- providers

namespace {

http::Endpoint endpoint_for(const ProviderConfig& p) {
  http::Endpoint e;
  e.base_url = p.base_url;
  e.bearer_token = http::env_secret(p.api_key_env.c_str());
  e.timeout = std::chrono::seconds(p.timeout_s);
  return e;
}

RetryPolicy policy(int attempts, int backoff_ms) {
  RetryPolicy r;
  r.max_attempts = attempts;
  r.initial_backoff = std::chrono::milliseconds(backoff_ms);
  return r;
}

ItemOutcome error_outcome(std::string item, const std::exception& e) { return {std::move(item), Outcome::error, e.what()}; }

}  // namespace

Providers make_providers(const ApiConfig& config) {
  Providers p;
  if (config.eo.provider == "fixture") {
    if (!config.eo.manifest.empty()) {
      if (!fs::exists(config.eo.manifest)) {
        throw Error(Errc::config, fmt::format("eo.manifest '{}' does not exist", config.eo.manifest.string()));
      }
      p.eo = std::make_shared<eo::FixtureProvider>(config.eo.manifest);
    }
  } else {
    eo::OpenEoConfig c;
    c.endpoint.base_url = config.eo.base_url;
    c.endpoint.bearer_token = http::env_secret("NUDGEX_EO_TOKEN");
    c.collection = config.eo.collection;
    c.retry = policy(config.eo.max_attempts, config.eo.backoff_ms);
    p.eo = std::make_shared<eo::OpenEoProvider>(std::move(c));
  }

  const auto& cap = config.captioner.chat;
  if (cap.provider == "http") {
    p.captioner = std::make_shared<llm::HttpChatClient>(llm::ChatEndpoint{endpoint_for(cap)});
  } else if (!config.captioner.fixture_captions.empty()) {
    p.captioner = std::make_shared<llm::FixtureChatClient>(llm::FixtureChatClient::from_file(config.captioner.fixture_captions));
  } else {
    p.captioner = std::make_shared<llm::FixtureChatClient>();
  }

  if (config.judge.chat.provider == "http") {
    p.judge = std::make_shared<llm::HttpChatClient>(llm::ChatEndpoint{endpoint_for(config.judge.chat)});
  } else {
    p.judge = std::make_shared<llm::StubJudgeClient>();
  }

  if (config.rag.chat.provider == "http") {
    p.generator = std::make_shared<llm::HttpChatClient>(llm::ChatEndpoint{endpoint_for(config.rag.chat)});
  } else {
    p.generator = std::make_shared<llm::GroundedEchoChatClient>();
  }

  const auto& emb = config.embedding.service;
  if (emb.provider == "http") {
    rag::EmbeddingEndpoint e;
    e.endpoint = endpoint_for(emb);
    e.model = emb.model;
    e.dimension = config.embedding.dimension;
    e.retry = policy(emb.max_attempts, emb.backoff_ms);
    p.embedder = std::make_shared<rag::HttpEmbeddingClient>(std::move(e));
  } else {
    p.embedder = std::make_shared<rag::StubEmbeddingClient>(config.embedding.dimension);
  }
  return p;
}

RunLock::RunLock(const fs::path& data_root) {
  fs::create_directories(data_root);
  fs::path file = data_root / ".lock";
  fd_ = ::open(file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(Errc::io, fmt::format("cannot open {}: {}", file.string(), std::strerror(errno)));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    int err = errno;
    ::close(fd_);
    fd_ = -1;
    if (err == EWOULDBLOCK) throw Error(Errc::busy, fmt::format("another stage is running on {}", data_root.string()));
    throw Error(Errc::io, fmt::format("cannot lock {}: {}", file.string(), std::strerror(err)));
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

// ---------------------------------------------------------------- workspace

Workspace::Workspace(ApiConfig config, Providers providers)
    : config_(std::move(config)),
      providers_(std::move(providers)),
      clock_(config_.clock()),
      catalog_((fs::create_directories(config_.data_root), config_.data_root), clock_),
      scenes_(config_.data_root, clock_),
      captions_(config_.data_root),
      scores_(config_.data_root),
      index_(rag::VectorIndex::open(config_.data_root / "rag", config_.embedding.dimension)) {
  config_.validate();
}

PipelineRun Workspace::begin(Stage stage, const Scope& scope) const {
  static std::atomic<unsigned> counter{0};
  PipelineRun run;
  run.stage = stage;
  run.scope = scope;
  run.started_at = clock_();
  run.run_id = fmt::format("{}-{}-{}", to_string(stage), format_timestamp(run.started_at), ++counter);
  return run;
}

void Workspace::finish(PipelineRun& run) const { run.finished_at = clock_(); }

llm::ChatClient& Workspace::require(const std::shared_ptr<llm::ChatClient>& client, std::string_view what) const {
  if (!client) throw Error(Errc::config, fmt::format("no {} provider configured", what));
  return *client;
}

RetryPolicy Workspace::retry_for(const ProviderConfig& p) const { return policy(p.max_attempts, p.backoff_ms); }

captioner::PromptConfig Workspace::prompt_config() const {
  captioner::PromptConfig c = captioner::PromptConfig::defaults();
  if (!config_.captioner.system_prompt.empty()) c.system_text = read_file(config_.captioner.system_prompt);
  if (!config_.captioner.shots.empty()) c.shots = captioner::parse_shots(read_file(config_.captioner.shots));
  c.indices = config_.captioner.indices;
  c.model_id = config_.captioner.chat.model;
  c.temperature = config_.captioner.temperature;
  return c;
}

fs::path Workspace::pair_path(std::string_view site_id, std::string_view caption_id, std::string_view ext) const {
  return config_.data_root / "pairs" / std::string(site_id) / fmt::format("{}.{}", caption_id, ext);
}

PipelineRun Workspace::ingest(const fs::path& sites_file, const std::optional<fs::path>& dossiers_dir) {
  RunLock lock(config_.data_root);
  PipelineRun run = begin(Stage::ingest, {});
  catalog::IngestReport report = catalog_.ingest_sites(sites_file);
  for (const auto& id : report.accepted_ids) run.items.push_back({"site:" + id, Outcome::ok, {}});
  for (const auto& r : report.rejections) {
    std::string item = fmt::format("site:{}", r.site_id.empty() ? fmt::format("row {}", r.row) : r.site_id);
    run.items.push_back({item, r.duplicate ? Outcome::skip : Outcome::error,
                         r.duplicate ? std::string("already in catalog") : fmt::format("row {}: {}", r.row, r.reason)});
  }
  if (dossiers_dir) {
    if (!fs::is_directory(*dossiers_dir)) {
      throw Error(Errc::io, fmt::format("dossier directory '{}' not found", dossiers_dir->string()));
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(*dossiers_dir)) {
      if (e.is_regular_file() && (e.path().extension() == ".md" || e.path().extension() == ".txt")) {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::string site_id = f.stem().string();
      std::string item = "dossier:" + site_id;
      try {
        auto before = catalog_.dossier(site_id);
        auto parsed = catalog_.ingest_dossier_file(site_id, f);
        std::string reason;
        for (const auto& w : parsed.warnings) reason += (reason.empty() ? "" : "; ") + w;
        bool unchanged = before && *before == parsed.dossier;
        run.items.push_back({item, unchanged ? Outcome::skip : Outcome::ok, unchanged ? "unchanged" : reason});
      } catch (const Error& e) {
        run.items.push_back(error_outcome(item, e));
      }
    }
  }
  finish(run);
  return run;
}

PipelineRun Workspace::acquire(const Scope& scope) {
  RunLock lock(config_.data_root);
  PipelineRun run = begin(Stage::acquire, scope);
  if (!providers_.eo) throw Error(Errc::config, "no earth-observation provider configured (eo.manifest or eo.provider)");
  std::vector<catalog::MiningSite> sites;
  for (auto& s : catalog_.list_sites()) {
    if (scope.includes(s.site_id)) sites.push_back(std::move(s));
  }
  if (sites.empty()) {
    throw Error(Errc::stage_order, scope.site_id ? fmt::format("site '{}' is not in the catalog", *scope.site_id)
                                                 : std::string("the catalog is empty; run ingest first"));
  }
  for (const auto& site : sites) {
    try {
      eo::AcquisitionPlan plan = eo::plan_acquisition(site, config_.acquisition);
      std::set<std::string> before;
      for (const auto& s : scenes_.list(site.site_id)) before.insert(s.scene_id);
      auto fetched = eo::fetch_scenes(plan, *providers_.eo, scenes_);
      if (fetched.empty()) {
        run.items.push_back({"site:" + site.site_id, Outcome::skip, "no scene satisfied the acquisition plan"});
      }
      for (const auto& s : fetched) {
        if (before.count(s.scene_id)) {
          run.items.push_back({"scene:" + s.scene_id, Outcome::skip, "already acquired"});
        } else {
          run.items.push_back({"scene:" + s.scene_id, Outcome::ok,
                               fmt::format("cloud {:.3f}, valid {:.3f}, auto_pass {}", s.quality.cloud_fraction,
                                           s.quality.valid_fraction, s.quality.auto_pass)});
        }
      }
    } catch (const std::exception& e) {
      run.items.push_back(error_outcome("site:" + site.site_id, e));
    }
  }
  finish(run);
  return run;
}

PipelineRun Workspace::caption(const Scope& scope) {
  RunLock lock(config_.data_root);
  PipelineRun run = begin(Stage::caption, scope);
  llm::ChatClient& client = require(providers_.captioner, "captioner");
  std::vector<eo::SceneAsset> approved;
  std::vector<std::string> pending;
  std::size_t total = 0;
  for (auto& s : scenes_.list()) {
    if (!scope.includes(s.site_id)) continue;
    ++total;
    if (s.review_state == eo::ReviewState::approved) approved.push_back(std::move(s));
    else if (s.review_state == eo::ReviewState::pending) pending.push_back(s.scene_id);
  }
  if (approved.empty()) {
    if (total == 0) throw Error(Errc::stage_order, "no scenes acquired in scope; run acquire first");
    std::string list;
    for (const auto& id : pending) list += (list.empty() ? "" : ", ") + id;
    throw Error(Errc::stage_order, fmt::format("no approved scenes in scope; awaiting review: {}",
                                               list.empty() ? std::string("none (all rejected)") : list));
  }
  captioner::PromptConfig prompt = prompt_config();
  std::vector<ItemOutcome> outcomes(approved.size());
  parallel_for(approved.size(), config_.parallelism, [&](std::size_t i) {
    const eo::SceneAsset& scene = approved[i];
    std::string item = "scene:" + scene.scene_id;
    try {
      catalog::MiningSite site = catalog_.site(scene.site_id);
      raster::RasterGrid grid = scenes_.load_raster(scene.scene_id);
      auto products = captioner::compute_products(grid, prompt.indices, config_.indices);
      auto assembled = captioner::assemble_prompt(site, catalog_.dossier(site.site_id), scene, grid, products, prompt);
      std::string hash = assembled.bundle.prompt_hash();
      if (captions_.count_for(scene.scene_id, hash) > 0) {
        outcomes[i] = {item, Outcome::skip, "already captioned with this prompt"};
        return;
      }
      captioner::GenerateOptions options;
      options.retry = retry_for(config_.captioner.chat);
      options.sleep = providers_.sleep;
      options.clock = clock_;
      options.tags = {{"site_name", site.name}};
      auto gen = captioner::generate_caption(assembled.bundle, client, captions_, site.site_id, scene.scene_id, options);
      std::string reason = fmt::format("{} after {} attempt(s)", gen.caption.caption_id, gen.attempts);
      for (const auto& w : assembled.warnings) reason += "; " + w;
      outcomes[i] = {item, Outcome::ok, reason};
    } catch (const std::exception& e) {
      outcomes[i] = error_outcome(item, e);
    }
  });
  run.items = std::move(outcomes);
  finish(run);
  return run;
}

void Workspace::export_pair(const CaptionCandidate& caption) {
  eo::SceneAsset scene = scenes_.get(caption.scene_id);
  catalog::MiningSite site = catalog_.site(caption.site_id);
  json meta{{"caption_id", caption.caption_id},
            {"site_id", site.site_id},
            {"site_name", site.name},
            {"country", site.country},
            {"latitude", site.latitude},
            {"longitude", site.longitude},
            {"scene_id", scene.scene_id},
            {"sensed_at", format_timestamp(scene.sensed_at)},
            {"caption", caption.text},
            {"model_id", caption.model_id},
            {"image", caption.caption_id + ".png"}};
  if (auto s = scores_.find(caption.caption_id)) {
    meta["judge"] = {{"average", s->average()}, {"passed", s->passed}, {"judge_model_id", s->judge_model_id}};
  }
  write_file_atomic(pair_path(site.site_id, caption.caption_id, "png"), raster::render_rgb(scenes_.load_raster(scene.scene_id)));
  write_file_atomic(pair_path(site.site_id, caption.caption_id, "json"), meta.dump(2) + "\n");
}

PipelineRun Workspace::judge(const Scope& scope) {
  RunLock lock(config_.data_root);
  PipelineRun run = begin(Stage::judge, scope);
  llm::ChatClient& client = require(providers_.judge, "judge");
  std::vector<CaptionCandidate> todo;
  for (auto& c : captions_.with_status(CaptionStatus::candidate)) {
    if (scope.includes(c.site_id)) todo.push_back(std::move(c));
  }
  judge::Rubric rubric = config_.rubric();
  judge::JudgeOptions options;
  options.model_id = config_.judge.chat.model;
  options.parse_attempts = config_.judge.parse_attempts;
  options.retry = retry_for(config_.judge.chat);
  options.sleep = providers_.sleep;
  options.clock = clock_;
  std::vector<ItemOutcome> outcomes(todo.size());
  parallel_for(todo.size(), config_.parallelism, [&](std::size_t i) {
    std::string item = "caption:" + todo[i].caption_id;
    try {
      judge::JudgeScore s = judge::judge_caption(todo[i].caption_id, captions_, scores_, rubric, client, options);
      outcomes[i] = {item, Outcome::ok,
                     fmt::format("{} (average {}/{}, min {})", s.passed ? "accepted" : "rejected_by_judge", s.sum,
                                 s.divisor, s.min_score())};
    } catch (const std::exception& e) {
      outcomes[i] = error_outcome(item, e);
    }
  });
  run.items = std::move(outcomes);
  for (const auto& c : captions_.with_status(CaptionStatus::accepted)) {
    if (!scope.includes(c.site_id)) continue;
    try {
      export_pair(c);
    } catch (const std::exception& e) {
      run.items.push_back(error_outcome("pair:" + c.caption_id, e));
    }
  }
  finish(run);
  return run;
}

PipelineRun Workspace::rag_index(const Scope& scope) {
  RunLock lock(config_.data_root);
  PipelineRun run = begin(Stage::index, scope);
  if (!providers_.embedder) throw Error(Errc::config, "no embedding provider configured");
  std::vector<CaptionCandidate> accepted;
  for (auto& c : captions_.with_status(CaptionStatus::accepted)) {
    if (scope.includes(c.site_id)) accepted.push_back(std::move(c));
  }
  if (accepted.empty()) {
    throw Error(Errc::stage_order, fmt::format("no accepted captions in scope ({} candidate(s) awaiting the judge)",
                                               captions_.with_status(CaptionStatus::candidate).size()));
  }
  std::lock_guard guard(index_write_);
  bool changed = false;
  for (const auto& c : accepted) {
    std::string chunk_id = rag::chunk_id_for(c.caption_id);
    std::string item = "caption:" + c.caption_id;
    try {
      if (auto existing = index_.find(chunk_id); existing && existing->text == c.text) {
        run.items.push_back({item, Outcome::skip, "already indexed"});
        continue;
      }
      catalog::MiningSite site = catalog_.site(c.site_id);
      for (const auto& text : rag::identity_chunker(c.text)) {
        rag::ChunkRecord r;
        r.chunk_id = chunk_id;
        r.caption_id = c.caption_id;
        r.site_id = site.site_id;
        r.country = site.country;
        r.site_name = site.name;
        r.text = text;
        r.vector = rag::embed(text, *providers_.embedder);
        std::string commodities;
        for (const auto& m : site.commodities) commodities += (commodities.empty() ? "" : ";") + m;
        r.payload = {{"scene_id", c.scene_id},
                     {"latitude", fmt::format("{:.4f}", site.latitude)},
                     {"longitude", fmt::format("{:.4f}", site.longitude)},
                     {"commodities", commodities}};
        index_.upsert(std::move(r));
      }
      changed = true;
      run.items.push_back({item, Outcome::ok, chunk_id});
    } catch (const std::exception& e) {
      run.items.push_back(error_outcome(item, e));
    }
  }
  if (changed) index_.save(config_.data_root / "rag");
  finish(run);
  return run;
}

PipelineRun Workspace::run_stage(Stage stage, const Scope& scope) {
  switch (stage) {
    case Stage::acquire: return acquire(scope);
    case Stage::caption: return caption(scope);
    case Stage::judge: return judge(scope);
    case Stage::index: return rag_index(scope);
    case Stage::ingest: break;
  }
  throw Error(Errc::argument, "ingest needs an input file; call ingest()");
}

eo::SceneAsset Workspace::review_scene(std::string_view scene_id, std::string_view verdict, std::string_view reviewer) {
  return scenes_.review(scene_id, eo::review_state_from_string(verdict), reviewer);
}

void Workspace::withdraw(const CaptionCandidate& caption) {
  std::error_code ec;
  fs::remove(pair_path(caption.site_id, caption.caption_id, "png"), ec);
  fs::remove(pair_path(caption.site_id, caption.caption_id, "json"), ec);
  std::lock_guard guard(index_write_);
  if (index_.remove(rag::chunk_id_for(caption.caption_id))) index_.save(config_.data_root / "rag");
}

CaptionCandidate Workspace::review_caption(std::string_view caption_id, std::string_view verdict,
                                           std::string_view reviewer) {
  if (verdict == "approve" || verdict == "approved" || verdict == "accept" || verdict == "accepted") {
    return captions_.confirm(caption_id, reviewer, clock_());
  }
  if (verdict == "reject" || verdict == "rejected") {
    CaptionCandidate c = captions_.reject_by_human(caption_id, reviewer, clock_());
    withdraw(c);
    return c;
  }
  throw Error(Errc::argument, fmt::format("unknown verdict '{}' (approve|reject)", verdict));
}

rag::RagAnswer Workspace::query(std::string_view question, std::optional<std::size_t> k,
                                std::optional<std::string> country) {
  if (!providers_.embedder) throw Error(Errc::config, "no embedding provider configured");
  rag::AnswerOptions options;
  options.k = k.value_or(config_.rag.k);
  if (country && !country->empty()) options.filter.country = std::move(country);
  options.model_id = config_.rag.chat.model;
  options.temperature = config_.rag.temperature;
  options.retry = retry_for(config_.rag.chat);
  options.sleep = providers_.sleep;
  return rag::answer(question, index_, *providers_.embedder, require(providers_.generator, "generator"), options);
}

std::string Workspace::scene_rgb_png(std::string_view scene_id) const {
  eo::SceneAsset scene = scenes_.get(scene_id);
  return raster::render_rgb(scenes_.load_raster(scene.scene_id));
}

std::string Workspace::scene_index_png(std::string_view scene_id, std::string_view index_name) const {
  eo::SceneAsset scene = scenes_.get(scene_id);
  std::string name(index_name);
  for (char& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (!config_.indices.contains(name)) throw Error(Errc::unknown_index, fmt::format("unknown index '{}'", index_name));
  return raster::render_index_png(raster::compute_index(scenes_.load_raster(scene.scene_id), name, config_.indices));
}

}  // namespace nudgex::gateway
