#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace nudgex::http {

struct Endpoint {
  std::string base_url;  // scheme://host[:port][/prefix]
  std::optional<std::string> bearer_token;
  std::chrono::seconds timeout{60};
};

struct Response {
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Reads a secret from the environment; nullopt when unset or empty.
std::optional<std::string> env_secret(const char* name);

/// Joins base_url's path prefix with `path`.
std::string join_path(std::string_view base_url, std::string_view path);

/// POSTs `body` as `content_type`. Connection failures, timeouts, 429 and
/// 5xx responses throw TransportError (with Retry-After when present);
/// other statuses are returned to the caller.
Response post(const Endpoint& endpoint, std::string_view path, const std::string& body,
              std::string_view content_type = "application/json");

Response get(const Endpoint& endpoint, std::string_view path);

}  // namespace nudgex::http
