#include "nudgex/captioner/captioner.hpp"

#include "nudgex/error.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace nudgex::captioner {

using nlohmann::json;

// ---------------------------------------------------------------- prompt

std::string PromptBundle::canonical() const {
  json shots_json = json::array();
  for (const auto& s : shots) shots_json.push_back({{"caption", s.caption}, {"context", s.context}});
  json j{{"dossier_text", dossier_text},
         {"image_png_base64", base64_encode(image)},
         {"index_summaries", index_summaries},
         {"model_id", model_id},
         {"shots", std::move(shots_json)},
         {"system_text", system_text},
         {"temperature", temperature}};
  return j.dump();
}

std::string PromptBundle::prompt_hash() const { return sha256_hex(canonical()); }

llm::ChatRequest to_chat_request(const PromptBundle& bundle) {
  using llm::ContentPart;
  llm::ChatRequest req;
  req.model = bundle.model_id;
  req.temperature = bundle.temperature;
  req.messages.push_back({"system", {ContentPart::of_text(bundle.system_text)}});
  for (const auto& shot : bundle.shots) {
    req.messages.push_back({"user", {ContentPart::of_text(shot.context)}});
    req.messages.push_back({"assistant", {ContentPart::of_text(shot.caption)}});
  }
  std::string text = bundle.dossier_text;
  text += "\n\nSpectral index summaries for this scene:\n";
  for (const auto& s : bundle.index_summaries) text += "- " + s + "\n";
  text += "\nThe attached image is the true-colour (B04, B03, B02) view of the scene. Write the caption.";
  req.messages.push_back({"user", {ContentPart::of_text(std::move(text)), ContentPart::of_png(bundle.image)}});
  return req;
}

const std::string& default_system_prompt() {
  static const std::string text =
      "You interpret Sentinel-2 satellite images of mining sites for readers who care about the environment. "
      "Read the landscape and describe the impact of surface mining on it: pits, benches, waste dumps, tailings "
      "ponds, haul roads, cleared land, and the state of nearby vegetation and water.\n"
      "\n"
      "You receive a true-colour image of a box of about 10 km by 10 km centred on the site, background notes on "
      "the site's geology, history and controversies, and a summary of spectral indices computed from the same "
      "scene:\n"
      "- NDVI (B08-B04)/(B08+B04): high values mean healthy vegetation.\n"
      "- NDWI (B03-B08)/(B03+B08): high values mean open water.\n"
      "- NDBI (B11-B08)/(B11+B08): high values mean built-up or compacted surfaces.\n"
      "- BSI ((B11+B04)-(B08+B02))/((B11+B04)+(B08+B02)): high values mean bare soil or exposed rock.\n"
      "- IRONOX B04/B02: high ratios point to iron oxides, often seen on waste rock and acid drainage.\n"
      "\n"
      "Write one paragraph of at most 120 words. Name the features you can see, connect them to the index "
      "values, and state the environmental consequences they suggest. Use precise terms. Do not invent facts that "
      "neither the image nor the notes support. Thin cloud can look like a small pit, so say so when unsure.";
  return text;
}

const std::vector<Shot>& default_shots() {
  static const std::vector<Shot> shots = {
      {"Site: Example copper mine (example-copper), CL. Geology: porphyry copper deposit. History: open-pit "
       "mining since the 1950s. Controversies: water use in an arid basin.\nIndex summaries: NDVI mean 0.050; "
       "BSI mean 0.210, fraction above 0.1 (bare soil) 0.820; NDWI fraction above 0.2 (water) 0.030.",
       "A vast terraced open pit dominates the scene, ringed by grey waste dumps and a network of haul roads. "
       "Bare-soil values cover most of the box and vegetation is almost absent, so wind erosion and dust are "
       "likely. A small turquoise tailings pond to the east, picked out by the water index, suggests chemically "
       "altered water that could seep into the scarce groundwater."},
      {"Site: Example iron ore mine (example-iron), BR. Geology: banded iron formation. History: expanded in the "
       "2010s. Controversies: clearing of tropical forest.\nIndex summaries: NDVI mean 0.520, fraction above 0.4 "
       "(vegetated) 0.610; BSI fraction above 0.1 (bare soil) 0.240; IRONOX mean 2.300.",
       "Red-brown benches cut into dense forest mark an active iron ore pit, with a sharp boundary between "
       "cleared ground and canopy. The iron-oxide ratio is high over the exposed benches, and bare soil covers "
       "about a quarter of the box. Fresh clearing at the pit edge points to continuing forest loss and sediment "
       "runoff into nearby streams."},
  };
  return shots;
}

PromptConfig PromptConfig::defaults() {
  PromptConfig c;
  c.system_text = default_system_prompt();
  c.shots = default_shots();
  return c;
}

std::vector<Shot> parse_shots(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(Errc::format, fmt::format("shots file is not JSON: {}", e.what()));
  }
  if (!j.is_array()) throw Error(Errc::format, "shots file must be a JSON array");
  std::vector<Shot> out;
  for (const auto& s : j) {
    if (!s.is_object() || !s.contains("context") || !s.contains("caption")) {
      throw Error(Errc::format, "each shot needs \"context\" and \"caption\"");
    }
    out.push_back({s["context"].get<std::string>(), s["caption"].get<std::string>()});
  }
  if (out.size() > kMaxShots) throw Error(Errc::format, fmt::format("at most {} shots, got {}", kMaxShots, out.size()));
  return out;
}

std::string render_shots(const std::vector<Shot>& shots) {
  json j = json::array();
  for (const auto& s : shots) j.push_back({{"context", s.context}, {"caption", s.caption}});
  return j.dump(2) + "\n";
}

std::string site_header(const catalog::MiningSite& site) {
  std::string commodities;
  for (const auto& c : site.commodities) commodities += (commodities.empty() ? "" : ", ") + c;
  return fmt::format("Site: {} ({}), {}, lat {:.4f}, lon {:.4f}; commodities: {}", site.name, site.site_id, site.country,
                     site.latitude, site.longitude, commodities.empty() ? "unknown" : commodities);
}

std::vector<raster::IndexProduct> compute_products(const raster::RasterGrid& grid, const std::vector<std::string>& names,
                                                   const raster::IndexRegistry& registry) {
  std::vector<raster::IndexProduct> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(raster::compute_index(grid, n, registry));
  return out;
}

AssembledPrompt assemble_prompt(const catalog::MiningSite& site, const std::optional<catalog::SiteDossier>& dossier,
                                const eo::SceneAsset& scene, const raster::RasterGrid& grid,
                                const std::vector<raster::IndexProduct>& products, const PromptConfig& config) {
  if (scene.review_state != eo::ReviewState::approved) {
    throw Error(Errc::precondition,
                fmt::format("scene '{}' is {}, not approved", scene.scene_id, eo::to_string(scene.review_state)));
  }
  if (scene.site_id != site.site_id) {
    throw Error(Errc::argument, fmt::format("scene '{}' belongs to '{}', not '{}'", scene.scene_id, scene.site_id,
                                            site.site_id));
  }
  if (config.shots.size() > kMaxShots) {
    throw Error(Errc::config, fmt::format("at most {} shots, got {}", kMaxShots, config.shots.size()));
  }
  if (config.temperature < 0.0) throw Error(Errc::config, "temperature must be >= 0");
  AssembledPrompt out;
  catalog::SiteDossier d;
  d.site_id = site.site_id;
  if (dossier) {
    d = *dossier;
  } else {
    out.warnings.push_back(fmt::format("site '{}' has no dossier; using empty sections", site.site_id));
  }
  PromptBundle& b = out.bundle;
  b.system_text = config.system_text;
  b.shots = config.shots;
  b.dossier_text = site_header(site) + "\n" + catalog::dossier_prompt_text(d);
  for (const auto& p : products) b.index_summaries.push_back(raster::index_summary(p));
  b.image = raster::render_rgb(grid);
  b.model_id = config.model_id;
  b.temperature = config.temperature;
  return out;
}

// ---------------------------------------------------------------- status

std::string_view to_string(CaptionStatus s) {
  switch (s) {
    case CaptionStatus::candidate: return "candidate";
    case CaptionStatus::accepted: return "accepted";
    case CaptionStatus::rejected_by_judge: return "rejected_by_judge";
    case CaptionStatus::rejected_by_human: return "rejected_by_human";
  }
  return "candidate";
}

CaptionStatus caption_status_from_string(std::string_view s) {
  if (s == "candidate") return CaptionStatus::candidate;
  if (s == "accepted") return CaptionStatus::accepted;
  if (s == "rejected_by_judge") return CaptionStatus::rejected_by_judge;
  if (s == "rejected_by_human") return CaptionStatus::rejected_by_human;
  throw Error(Errc::format, fmt::format("unknown caption status '{}'", s));
}

bool is_allowed_transition(CaptionStatus from, CaptionStatus to) {
  if (from == CaptionStatus::candidate) return to != CaptionStatus::candidate;
  return from == CaptionStatus::accepted && to == CaptionStatus::rejected_by_human;
}

json to_json(const CaptionCandidate& c) {
  json j{{"caption_id", c.caption_id},
         {"site_id", c.site_id},
         {"scene_id", c.scene_id},
         {"text", c.text},
         {"model_id", c.model_id},
         {"prompt_hash", c.prompt_hash},
         {"created_at", format_timestamp(c.created_at)},
         {"status", to_string(c.status)}};
  if (c.reviewer) j["reviewer"] = *c.reviewer;
  if (c.reviewed_at) j["reviewed_at"] = format_timestamp(*c.reviewed_at);
  return j;
}

CaptionCandidate caption_from_json(const json& j) {
  CaptionCandidate c;
  c.caption_id = j.at("caption_id").get<std::string>();
  c.site_id = j.at("site_id").get<std::string>();
  c.scene_id = j.at("scene_id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.model_id = j.value("model_id", "");
  c.prompt_hash = j.value("prompt_hash", "");
  c.created_at = parse_timestamp(j.at("created_at").get<std::string>());
  c.status = caption_status_from_string(j.at("status").get<std::string>());
  if (j.contains("reviewer")) c.reviewer = j["reviewer"].get<std::string>();
  if (j.contains("reviewed_at")) c.reviewed_at = parse_timestamp(j["reviewed_at"].get<std::string>());
  return c;
}

// ---------------------------------------------------------------- store

std::string make_caption_id(std::string_view scene_id, std::string_view prompt_hash, std::size_t ordinal) {
  return "cap-" + sha256_hex(fmt::format("{}|{}|{}", scene_id, prompt_hash, ordinal)).substr(0, 16);
}

CaptionStore::CaptionStore(fs::path data_root) : file_(std::move(data_root) / "captions" / "candidates.jsonl") {
  if (!fs::exists(file_)) return;
  std::size_t n = 0;
  for (const auto& line : read_lines(file_)) {
    ++n;
    try {
      CaptionCandidate c = caption_from_json(json::parse(line));
      captions_[c.caption_id] = std::move(c);
    } catch (const std::exception& e) {
      throw Error(Errc::format, fmt::format("{} line {}: {}", file_.string(), n, e.what()));
    }
  }
}

void CaptionStore::flush() const {
  std::string out;
  for (const auto& [id, c] : captions_) out += to_json(c).dump() + "\n";
  write_file_atomic(file_, out);
}

CaptionCandidate CaptionStore::create(std::string site_id, std::string scene_id, std::string text, std::string model_id,
                                      std::string prompt_hash, Timestamp created_at) {
  if (trim(text).empty()) throw Error(Errc::empty_response, "caption text is empty");
  std::lock_guard lock(mutex_);
  std::size_t ordinal = 0;
  for (const auto& [id, c] : captions_) ordinal += c.scene_id == scene_id && c.prompt_hash == prompt_hash;
  CaptionCandidate c;
  c.caption_id = make_caption_id(scene_id, prompt_hash, ordinal);
  while (captions_.count(c.caption_id)) c.caption_id = make_caption_id(scene_id, prompt_hash, ++ordinal);
  c.site_id = std::move(site_id);
  c.scene_id = std::move(scene_id);
  c.text = std::move(text);
  c.model_id = std::move(model_id);
  c.prompt_hash = std::move(prompt_hash);
  c.created_at = created_at;
  captions_[c.caption_id] = c;
  flush();
  return c;
}

std::optional<CaptionCandidate> CaptionStore::find(std::string_view caption_id) const {
  std::lock_guard lock(mutex_);
  auto it = captions_.find(caption_id);
  if (it == captions_.end()) return std::nullopt;
  return it->second;
}

CaptionCandidate CaptionStore::get(std::string_view caption_id) const {
  auto c = find(caption_id);
  if (!c) throw Error(Errc::not_found, fmt::format("unknown caption '{}'", caption_id));
  return *c;
}

std::vector<CaptionCandidate> CaptionStore::list(std::optional<std::string_view> site_id) const {
  std::lock_guard lock(mutex_);
  std::vector<CaptionCandidate> out;
  for (const auto& [id, c] : captions_) {
    if (!site_id || c.site_id == *site_id) out.push_back(c);
  }
  return out;
}

std::vector<CaptionCandidate> CaptionStore::with_status(CaptionStatus status) const {
  std::lock_guard lock(mutex_);
  std::vector<CaptionCandidate> out;
  for (const auto& [id, c] : captions_) {
    if (c.status == status) out.push_back(c);
  }
  return out;
}

std::size_t CaptionStore::count_for(std::string_view scene_id, std::string_view prompt_hash) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(captions_.begin(), captions_.end(), [&](const auto& kv) {
    return kv.second.scene_id == scene_id && kv.second.prompt_hash == prompt_hash;
  }));
}

std::size_t CaptionStore::size() const {
  std::lock_guard lock(mutex_);
  return captions_.size();
}

CaptionCandidate CaptionStore::transition(std::string_view caption_id, CaptionStatus expected, CaptionStatus next) {
  std::lock_guard lock(mutex_);
  auto it = captions_.find(caption_id);
  if (it == captions_.end()) throw Error(Errc::not_found, fmt::format("unknown caption '{}'", caption_id));
  CaptionCandidate& c = it->second;
  if (c.status != expected) {
    throw Error(Errc::conflict, fmt::format("caption '{}' is {}, expected {}", caption_id, to_string(c.status),
                                            to_string(expected)));
  }
  if (!is_allowed_transition(c.status, next)) {
    throw Error(Errc::precondition,
                fmt::format("caption '{}' cannot go from {} to {}", caption_id, to_string(c.status), to_string(next)));
  }
  c.status = next;
  flush();
  return c;
}

CaptionCandidate CaptionStore::confirm(std::string_view caption_id, std::string_view reviewer, Timestamp at) {
  if (trim(reviewer).empty()) throw Error(Errc::argument, "reviewer is required");
  std::lock_guard lock(mutex_);
  auto it = captions_.find(caption_id);
  if (it == captions_.end()) throw Error(Errc::not_found, fmt::format("unknown caption '{}'", caption_id));
  CaptionCandidate& c = it->second;
  if (c.status == CaptionStatus::candidate) {
    throw Error(Errc::precondition, fmt::format("caption '{}' has not passed the judge yet", caption_id));
  }
  if (c.status != CaptionStatus::accepted || c.reviewer) {
    throw Error(Errc::conflict, fmt::format("caption '{}' already reviewed ({})", caption_id, to_string(c.status)));
  }
  c.reviewer = std::string(reviewer);
  c.reviewed_at = at;
  flush();
  return c;
}

CaptionCandidate CaptionStore::reject_by_human(std::string_view caption_id, std::string_view reviewer, Timestamp at) {
  if (trim(reviewer).empty()) throw Error(Errc::argument, "reviewer is required");
  std::lock_guard lock(mutex_);
  auto it = captions_.find(caption_id);
  if (it == captions_.end()) throw Error(Errc::not_found, fmt::format("unknown caption '{}'", caption_id));
  CaptionCandidate& c = it->second;
  if (!is_allowed_transition(c.status, CaptionStatus::rejected_by_human)) {
    throw Error(Errc::conflict, fmt::format("caption '{}' already {}", caption_id, to_string(c.status)));
  }
  c.status = CaptionStatus::rejected_by_human;
  c.reviewer = std::string(reviewer);
  c.reviewed_at = at;
  flush();
  return c;
}

Generation generate_caption(const PromptBundle& bundle, llm::ChatClient& client, CaptionStore& store,
                            std::string_view site_id, std::string_view scene_id, const GenerateOptions& options) {
  llm::ChatRequest req = to_chat_request(bundle);
  req.tags = options.tags;
  req.tags["site_id"] = std::string(site_id);
  req.tags["scene_id"] = std::string(scene_id);
  Generation out;
  std::string text = with_retry(options.retry, [&] { return client.complete(req); }, options.sleep, &out.attempts);
  if (trim(text).empty()) {
    throw Error(Errc::empty_response, fmt::format("model returned no text for scene '{}'", scene_id));
  }
  out.caption = store.create(std::string(site_id), std::string(scene_id), trim(text), bundle.model_id,
                             bundle.prompt_hash(), options.clock());
  return out;
}

}  // namespace nudgex::captioner
