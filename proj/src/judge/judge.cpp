#include "nudgex/judge/judge.hpp"

#include "nudgex/error.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace nudgex::judge {

using nlohmann::json;

Rubric Rubric::defaults() {
  Rubric r;
  r.dimensions = {{
      {"environmental_focus",
       "The caption is about environmental conditions: land disturbance, vegetation, water, soil, pollution."},
      {"specific_terminology",
       "The caption uses precise mining and remote-sensing terms (open pit, tailings, benches, NDVI) correctly."},
      {"pattern_observation",
       "The caption points out spatial patterns visible in the scene and relates them to each other."},
      {"constraint_adherence",
       "The caption stays within the instructions: one paragraph, no facts the image or notes do not support."},
      {"conciseness", "The caption is short and free of filler or repetition."},
  }};
  return r;
}

void Rubric::validate() const {
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    if (dimensions[i].name != kDimensionNames[i]) {
      throw Error(Errc::config,
                  fmt::format("rubric dimension {} must be '{}', got '{}'", i, kDimensionNames[i], dimensions[i].name));
    }
  }
  if (!(theta_avg >= kScaleMin && theta_avg <= kScaleMax)) {
    throw Error(Errc::config, fmt::format("theta_avg {} outside [{}, {}]", theta_avg, kScaleMin, kScaleMax));
  }
  if (theta_min < kScaleMin || theta_min > kScaleMax) {
    throw Error(Errc::config, fmt::format("theta_min {} outside [{}, {}]", theta_min, kScaleMin, kScaleMax));
  }
  if (static_cast<double>(theta_min) > theta_avg) {
    throw Error(Errc::config, fmt::format("theta_min {} exceeds theta_avg {}", theta_min, theta_avg));
  }
}

bool gate(const Scores& scores, const Rubric& rubric) {
  int sum = 0;
  int lo = kScaleMax;
  for (int s : scores) {
    sum += s;
    lo = std::min(lo, s);
  }
  // sum/5 is correctly rounded, so it compares equal to a threshold literal
  // naming the same rational (4.2 vs 21/5).
  return static_cast<double>(sum) / kDivisor >= rubric.theta_avg && lo >= rubric.theta_min;
}

std::optional<std::string_view> extract_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          std::string_view candidate = text.substr(start, i - start + 1);
          if (json::accept(candidate)) return candidate;
          break;
        }
      }
    }
  }
  return std::nullopt;
}

Judgement parse_judge_response(std::string_view text) {
  auto object = extract_json_object(text);
  if (!object) throw Error(Errc::judge_format, "no JSON object in judge response");
  json j = json::parse(*object);
  if (!j.contains("scores") || !j["scores"].is_object()) throw Error(Errc::judge_format, "missing \"scores\" object");
  const json& s = j["scores"];
  Judgement out;
  for (const auto& [key, value] : s.items()) {
    if (std::find(kDimensionNames.begin(), kDimensionNames.end(), key) == kDimensionNames.end()) {
      throw Error(Errc::judge_format, fmt::format("unknown dimension '{}'", key));
    }
  }
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    std::string name(kDimensionNames[i]);
    if (!s.contains(name)) throw Error(Errc::judge_format, fmt::format("missing dimension '{}'", name));
    const json& v = s[name];
    int score;
    if (v.is_number_integer()) {
      score = v.get<int>();
    } else if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) {
      score = static_cast<int>(v.get<double>());
    } else {
      throw Error(Errc::judge_format, fmt::format("score for '{}' is not an integer", name));
    }
    if (score < kScaleMin || score > kScaleMax) {
      throw Error(Errc::judge_format, fmt::format("score {} for '{}' outside {}..{}", score, name, kScaleMin, kScaleMax));
    }
    out.scores[i] = score;
  }
  if (j.contains("rationale") && j["rationale"].is_string()) out.rationale = j["rationale"].get<std::string>();
  return out;
}

int JudgeScore::min_score() const { return *std::min_element(scores.begin(), scores.end()); }

json to_json(const JudgeScore& s) {
  json scores = json::object();
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) scores[std::string(kDimensionNames[i])] = s.scores[i];
  return {{"caption_id", s.caption_id},
          {"scores", std::move(scores)},
          {"sum", s.sum},
          {"divisor", s.divisor},
          {"average", s.average()},
          {"rationale", s.rationale},
          {"passed", s.passed},
          {"raw_response", s.raw_response},
          {"judge_model_id", s.judge_model_id},
          {"theta_avg", s.theta_avg},
          {"theta_min", s.theta_min},
          {"scored_at", format_timestamp(s.scored_at)}};
}

JudgeScore score_from_json(const json& j) {
  JudgeScore s;
  s.caption_id = j.at("caption_id").get<std::string>();
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    s.scores[i] = j.at("scores").at(std::string(kDimensionNames[i])).get<int>();
  }
  s.sum = j.at("sum").get<int>();
  s.divisor = j.at("divisor").get<int>();
  s.rationale = j.value("rationale", "");
  s.passed = j.at("passed").get<bool>();
  s.raw_response = j.value("raw_response", "");
  s.judge_model_id = j.value("judge_model_id", "");
  s.theta_avg = j.value("theta_avg", 4.0);
  s.theta_min = j.value("theta_min", 3);
  s.scored_at = parse_timestamp(j.at("scored_at").get<std::string>());
  return s;
}

llm::ChatRequest build_judge_request(const captioner::CaptionCandidate& caption, const Rubric& rubric,
                                     std::string_view model_id) {
  std::string system =
      "You grade captions written for satellite images of mining sites. Score the caption on each dimension "
      "below with an integer from 1 (poor) to 5 (excellent).\n";
  for (const auto& d : rubric.dimensions) system += fmt::format("- {}: {}\n", d.name, d.definition);
  system +=
      "Answer with one JSON object and nothing else, in exactly this shape:\n"
      "{\"scores\": {";
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    system += fmt::format("{}\"{}\": <1-5>", i ? ", " : "", kDimensionNames[i]);
  }
  system += "}, \"rationale\": \"<one or two sentences>\"}";

  llm::ChatRequest req;
  req.model = std::string(model_id);
  req.temperature = 0.0;
  req.messages.push_back({"system", {llm::ContentPart::of_text(std::move(system))}});
  req.messages.push_back({"user", {llm::ContentPart::of_text("Caption to grade:\n" + caption.text)}});
  req.tags = {{"caption_id", caption.caption_id}, {"site_id", caption.site_id}, {"scene_id", caption.scene_id}};
  return req;
}

JudgeScore score_caption(const captioner::CaptionCandidate& caption, const Rubric& rubric, llm::ChatClient& client,
                         const JudgeOptions& options) {
  if (caption.status != captioner::CaptionStatus::candidate) {
    throw Error(Errc::precondition,
                fmt::format("caption '{}' is {}, not a candidate", caption.caption_id, to_string(caption.status)));
  }
  llm::ChatRequest req = build_judge_request(caption, rubric, options.model_id);
  const int attempts = std::max(1, options.parse_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    std::string raw = with_retry(options.retry, [&] { return client.complete(req); }, options.sleep);
    try {
      Judgement parsed = parse_judge_response(raw);
      JudgeScore s;
      s.caption_id = caption.caption_id;
      s.scores = parsed.scores;
      for (int v : parsed.scores) s.sum += v;
      s.rationale = std::move(parsed.rationale);
      s.passed = gate(parsed.scores, rubric);
      s.raw_response = std::move(raw);
      s.judge_model_id = options.model_id;
      s.theta_avg = rubric.theta_avg;
      s.theta_min = rubric.theta_min;
      s.scored_at = options.clock();
      return s;
    } catch (const Error& e) {
      if (e.code() != Errc::judge_format) throw;
      last_error = e.detail();
    }
  }
  throw Error(Errc::judge_format,
              fmt::format("caption '{}': judge output unusable after {} attempts ({})", caption.caption_id, attempts,
                          last_error));
}

ScoreStore::ScoreStore(fs::path data_root) : file_(std::move(data_root) / "captions" / "scores.jsonl") {
  if (!fs::exists(file_)) return;
  std::size_t n = 0;
  for (const auto& line : read_lines(file_)) {
    ++n;
    try {
      JudgeScore s = score_from_json(json::parse(line));
      scores_[s.caption_id] = std::move(s);
    } catch (const std::exception& e) {
      throw Error(Errc::format, fmt::format("{} line {}: {}", file_.string(), n, e.what()));
    }
  }
}

void ScoreStore::put(const JudgeScore& score) {
  std::lock_guard lock(mutex_);
  scores_[score.caption_id] = score;
  std::string out;
  for (const auto& [id, s] : scores_) out += to_json(s).dump() + "\n";
  write_file_atomic(file_, out);
}

std::optional<JudgeScore> ScoreStore::find(std::string_view caption_id) const {
  std::lock_guard lock(mutex_);
  auto it = scores_.find(caption_id);
  if (it == scores_.end()) return std::nullopt;
  return it->second;
}

std::vector<JudgeScore> ScoreStore::list() const {
  std::lock_guard lock(mutex_);
  std::vector<JudgeScore> out;
  for (const auto& [id, s] : scores_) out.push_back(s);
  return out;
}

std::size_t ScoreStore::size() const {
  std::lock_guard lock(mutex_);
  return scores_.size();
}

JudgeScore judge_caption(std::string_view caption_id, captioner::CaptionStore& captions, ScoreStore& scores,
                         const Rubric& rubric, llm::ChatClient& client, const JudgeOptions& options) {
  using captioner::CaptionStatus;
  captioner::CaptionCandidate caption = captions.get(caption_id);
  JudgeScore s = score_caption(caption, rubric, client, options);
  scores.put(s);
  captions.transition(caption_id, CaptionStatus::candidate,
                      s.passed ? CaptionStatus::accepted : CaptionStatus::rejected_by_judge);
  return s;
}

}  // namespace nudgex::judge
