#pragma once

#include "nudgex/captioner/captioner.hpp"
#include "nudgex/llm/chat.hpp"
#include "nudgex/retry.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace nudgex::judge {

inline constexpr std::array<std::string_view, 5> kDimensionNames = {
    "environmental_focus", "specific_terminology", "pattern_observation", "constraint_adherence", "conciseness"};
inline constexpr int kScaleMin = 1;
inline constexpr int kScaleMax = 5;
inline constexpr int kDivisor = 5;

using Scores = std::array<int, 5>;  // in kDimensionNames order

struct Dimension {
  std::string name;
  std::string definition;
};

struct Rubric {
  std::array<Dimension, 5> dimensions;
  double theta_avg = 4.0;
  int theta_min = 3;

  static Rubric defaults();
  /// Names in the fixed order, thresholds in range, theta_min <= theta_avg.
  void validate() const;
};

/// Inclusive: sum/5 >= theta_avg and min >= theta_min.
bool gate(const Scores& scores, const Rubric& rubric);

/// First balanced {...} in `text`, string- and escape-aware.
std::optional<std::string_view> extract_json_object(std::string_view text);

struct Judgement {
  Scores scores{};
  std::string rationale;
};

/// Throws judge_format when no object is found, a dimension is missing or
/// unknown, or a score is not an integer in 1..5.
Judgement parse_judge_response(std::string_view text);

struct JudgeScore {
  std::string caption_id;
  Scores scores{};
  int sum = 0;
  int divisor = kDivisor;
  std::string rationale;
  bool passed = false;
  std::string raw_response;
  std::string judge_model_id;
  double theta_avg = 4.0;
  int theta_min = 3;
  Timestamp scored_at{};

  double average() const { return static_cast<double>(sum) / divisor; }
  int min_score() const;
};

nlohmann::json to_json(const JudgeScore& s);
JudgeScore score_from_json(const nlohmann::json& j);

/// Text-only judge prompt: rubric definitions, thresholds are not revealed.
llm::ChatRequest build_judge_request(const captioner::CaptionCandidate& caption, const Rubric& rubric,
                                     std::string_view model_id);

struct JudgeOptions {
  std::string model_id = "stub-judge";
  int parse_attempts = 2;  // total calls allowed to produce parseable output
  RetryPolicy retry;
  Sleeper sleep = thread_sleeper();
  Clock clock = system_clock();
};

/// Asks the judge and gates the result. Does not persist anything.
JudgeScore score_caption(const captioner::CaptionCandidate& caption, const Rubric& rubric, llm::ChatClient& client,
                         const JudgeOptions& options = {});

/// `<root>/captions/scores.jsonl`, latest score per caption, sorted by id.
class ScoreStore {
 public:
  explicit ScoreStore(fs::path data_root);

  void put(const JudgeScore& score);
  std::optional<JudgeScore> find(std::string_view caption_id) const;
  std::vector<JudgeScore> list() const;
  std::size_t size() const;

 private:
  fs::path file_;
  mutable std::mutex mutex_;
  std::map<std::string, JudgeScore, std::less<>> scores_;
};

/// score_caption, persist the score, then move the caption out of candidate
/// (accepted or rejected_by_judge) with compare-and-set. Format failures
/// leave the caption as a candidate.
JudgeScore judge_caption(std::string_view caption_id, captioner::CaptionStore& captions, ScoreStore& scores,
                         const Rubric& rubric, llm::ChatClient& client, const JudgeOptions& options = {});

}  // namespace nudgex::judge
