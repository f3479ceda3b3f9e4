#pragma once

#include "nudgex/http.hpp"
#include "nudgex/retry.hpp"
#include "nudgex/util.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

namespace nudgex::llm {

struct ContentPart {
  enum class Kind { text, image } kind = Kind::text;
  std::string text;
  std::string png;  // raw bytes; base64-encoded on the wire

  static ContentPart of_text(std::string t) { return {Kind::text, std::move(t), {}}; }
  static ContentPart of_png(std::string bytes) { return {Kind::image, {}, std::move(bytes)}; }
};

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::vector<ContentPart> content;

  /// Concatenated text parts.
  std::string text() const;
};

struct ChatRequest {
  std::string model;
  double temperature = 0.2;
  std::vector<ChatMessage> messages;
  /// Not sent. Lets offline clients key their answers (site_id, scene_id,
  /// caption_id, ...).
  std::map<std::string, std::string> tags;

  std::size_t image_count() const;
};

/// {model, temperature, messages:[{role, content:[{type:"text",text} |
/// {type:"image", mime_type:"image/png", data:<base64>}]}]}
nlohmann::json to_wire(const ChatRequest& request);

/// choices[0].message.content; a list of text parts is concatenated.
/// Throws format error when the shape is wrong.
std::string parse_chat_response(std::string_view body);

/// One provider round trip. Clients do not retry; callers wrap calls in
/// with_retry.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct ChatEndpoint {
  http::Endpoint endpoint;
  std::string path = "/chat/completions";
};

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(ChatEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::string complete(const ChatRequest& request) override;

 private:
  ChatEndpoint endpoint_;
};

/// Returns the caption stored under tags "site_id/scene_id"; other keys get
/// a deterministic caption built from the "site_name" tag.
class FixtureChatClient : public ChatClient {
 public:
  explicit FixtureChatClient(std::map<std::string, std::string> captions = {}, bool synthesize_missing = true)
      : captions_(std::move(captions)), synthesize_missing_(synthesize_missing) {}

  /// JSON object {"site_id/scene_id": caption, ...} or {"site_id": caption}.
  static FixtureChatClient from_file(const fs::path& path);

  std::string complete(const ChatRequest& request) override;
  static std::string synthesize(const ChatRequest& request);

 private:
  std::map<std::string, std::string> captions_;
  bool synthesize_missing_;
};

/// Plays back a fixed sequence of replies or transport failures, then keeps
/// returning the last reply. Records every request.
class ScriptedChatClient : public ChatClient {
 public:
  using Step = std::variant<std::string, TransportError>;
  explicit ScriptedChatClient(std::vector<Step> steps);

  std::string complete(const ChatRequest& request) override;
  int calls() const;
  std::vector<ChatRequest> requests() const;

 private:
  mutable std::mutex mutex_;
  std::deque<Step> steps_;
  std::string last_;
  int calls_ = 0;
  std::vector<ChatRequest> requests_;
};

/// Judge stand-in: answers every request with the strict score JSON. Scores
/// default to 5 everywhere; an override is picked when any request tag value
/// equals its key.
class StubJudgeClient : public ChatClient {
 public:
  explicit StubJudgeClient(std::array<int, 5> default_scores = {5, 5, 5, 5, 5}) : default_(default_scores) {}
  void set_scores(std::string key, std::array<int, 5> scores);

  std::string complete(const ChatRequest& request) override;

 private:
  std::array<int, 5> default_;
  std::map<std::string, std::array<int, 5>> overrides_;
};

/// Generation stand-in for retrieval answers: writes one sentence per
/// evidence line "[site_id] ..." found in the prompt, citing the marker.
class GroundedEchoChatClient : public ChatClient {
 public:
  std::string complete(const ChatRequest& request) override;
};

}  // namespace nudgex::llm
