#include "nudgex/llm/chat.hpp"

#include "nudgex/error.hpp"
#include "nudgex/judge/judge.hpp"
#include "nudgex/util.hpp"

#include <cctype>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace nudgex::llm {

using nlohmann::json;

std::string ChatMessage::text() const {
  std::string out;
  for (const auto& p : content) {
    if (p.kind != ContentPart::Kind::text) continue;
    if (!out.empty()) out += "\n";
    out += p.text;
  }
  return out;
}

std::size_t ChatRequest::image_count() const {
  std::size_t n = 0;
  for (const auto& m : messages) {
    for (const auto& p : m.content) n += p.kind == ContentPart::Kind::image;
  }
  return n;
}

json to_wire(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json parts = json::array();
    for (const auto& p : m.content) {
      if (p.kind == ContentPart::Kind::text) {
        parts.push_back({{"type", "text"}, {"text", p.text}});
      } else {
        parts.push_back({{"type", "image"}, {"mime_type", "image/png"}, {"data", base64_encode(p.png)}});
      }
    }
    messages.push_back({{"role", m.role}, {"content", std::move(parts)}});
  }
  return {{"model", request.model}, {"temperature", request.temperature}, {"messages", std::move(messages)}};
}

std::string parse_chat_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(Errc::format, fmt::format("chat response is not JSON: {}", e.what()));
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw Error(Errc::format, "chat response has no choices");
  }
  const json& msg = j["choices"][0].value("message", json::object());
  if (!msg.contains("content")) throw Error(Errc::format, "chat response choice has no message content");
  const json& content = msg["content"];
  if (content.is_null()) return {};
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content) {
      if (part.is_string()) {
        out += part.get<std::string>();
      } else if (part.is_object() && part.value("type", "") == "text") {
        out += part.value("text", "");
      }
    }
    return out;
  }
  throw Error(Errc::format, "chat response content has an unexpected type");
}

std::string HttpChatClient::complete(const ChatRequest& request) {
  http::Response res = http::post(endpoint_.endpoint, endpoint_.path, to_wire(request).dump());
  if (res.status != 200) {
    throw Error(Errc::transport, fmt::format("chat provider returned HTTP {}: {}", res.status, res.body.substr(0, 200)));
  }
  return parse_chat_response(res.body);
}

// ---------------------------------------------------------------- fixtures

FixtureChatClient FixtureChatClient::from_file(const fs::path& path) {
  json j = json::parse(read_file(path));
  if (!j.is_object()) throw Error(Errc::format, fmt::format("{}: expected an object of captions", path.string()));
  std::map<std::string, std::string> captions;
  for (const auto& [k, v] : j.items()) captions[k] = v.get<std::string>();
  return FixtureChatClient(std::move(captions));
}

std::string FixtureChatClient::complete(const ChatRequest& request) {
  auto tag = [&](const char* name) {
    auto it = request.tags.find(name);
    return it == request.tags.end() ? std::string() : it->second;
  };
  std::string site = tag("site_id");
  std::string scene = tag("scene_id");
  if (auto it = captions_.find(site + "/" + scene); it != captions_.end()) return it->second;
  if (auto it = captions_.find(site); it != captions_.end()) return it->second;
  if (!synthesize_missing_) return {};
  return synthesize(request);
}

std::string FixtureChatClient::synthesize(const ChatRequest& request) {
  auto it = request.tags.find("site_name");
  std::string name = it == request.tags.end() ? std::string("the site") : it->second;
  return fmt::format(
      "The true-colour view of {} shows an open-pit surface mine: a pale excavation with terraced benches sits at "
      "the centre, haul roads radiate from it, and a tailings pond with discoloured water lies to one side. "
      "Vegetation is sparse next to the pit and recovers with distance, a pattern consistent with dust deposition "
      "and land clearing. The bare-soil index is highest over the pit floor and waste dumps, which signals erosion "
      "risk, while the water index marks the pond as a possible source of contaminated runoff.",
      name);
}

ScriptedChatClient::ScriptedChatClient(std::vector<Step> steps) : steps_(steps.begin(), steps.end()) {}

std::string ScriptedChatClient::complete(const ChatRequest& request) {
  std::lock_guard lock(mutex_);
  ++calls_;
  requests_.push_back(request);
  if (steps_.empty()) return last_;
  Step step = std::move(steps_.front());
  steps_.pop_front();
  if (auto* err = std::get_if<TransportError>(&step)) throw *err;
  last_ = std::get<std::string>(step);
  return last_;
}

int ScriptedChatClient::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::vector<ChatRequest> ScriptedChatClient::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

void StubJudgeClient::set_scores(std::string key, std::array<int, 5> scores) { overrides_[std::move(key)] = scores; }

std::string StubJudgeClient::complete(const ChatRequest& request) {
  std::array<int, 5> scores = default_;
  for (const auto& [name, value] : request.tags) {
    if (auto it = overrides_.find(value); it != overrides_.end()) {
      scores = it->second;
      break;
    }
  }
  json s = json::object();
  for (std::size_t i = 0; i < judge::kDimensionNames.size(); ++i) s[std::string(judge::kDimensionNames[i])] = scores[i];
  return json{{"scores", s}, {"rationale", "stub judgement"}}.dump();
}

std::string GroundedEchoChatClient::complete(const ChatRequest& request) {
  std::string prompt;
  for (const auto& m : request.messages) {
    if (m.role == "user") prompt += m.text() + "\n";
  }
  std::istringstream in(prompt);
  std::string line;
  std::set<std::string> seen;
  std::string out = "Based on the retrieved captions:";
  while (std::getline(in, line)) {
    if (line.size() < 3 || line.front() != '[') continue;
    std::size_t close = line.find(']');
    if (close == std::string::npos) continue;
    std::string id = line.substr(1, close - 1);
    if (!seen.insert(id).second) continue;
    std::string rest = trim(std::string_view(line).substr(close + 1));
    std::size_t colon = rest.find(": ");
    std::string label = colon == std::string::npos ? rest : rest.substr(0, colon);
    std::string evidence = colon == std::string::npos ? std::string() : rest.substr(colon + 2);
    // First sentence: a period followed by a space and a capital ("No. 1" does not end one).
    for (std::size_t stop = evidence.find(". "); stop != std::string::npos; stop = evidence.find(". ", stop + 1)) {
      if (stop + 2 < evidence.size() && std::isupper(static_cast<unsigned char>(evidence[stop + 2]))) {
        evidence.resize(stop + 1);
        break;
      }
    }
    out += fmt::format(" {} [{}]: {}", label, id, evidence);
  }
  return out;
}

}  // namespace nudgex::llm
