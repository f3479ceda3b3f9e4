#include "nudgex/http.hpp"

#include "nudgex/error.hpp"

#include <httplib.h>

#include <cstdlib>

#include <fmt/format.h>

namespace nudgex::http {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // "" or "/v1"
};

SplitUrl split(std::string_view base_url) {
  std::size_t scheme = base_url.find("://");
  if (scheme == std::string_view::npos) {
    throw Error(Errc::config, fmt::format("base URL '{}' lacks a scheme", base_url));
  }
  std::size_t slash = base_url.find('/', scheme + 3);
  SplitUrl out;
  out.origin = std::string(base_url.substr(0, slash));
  if (slash != std::string_view::npos) out.prefix = std::string(base_url.substr(slash));
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

std::optional<int> retry_after(const httplib::Result& res) {
  if (!res || !res->has_header("Retry-After")) return std::nullopt;
  try {
    return std::stoi(res->get_header_value("Retry-After"));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

Response finish(const httplib::Result& res, std::string_view url) {
  if (!res) {
    throw TransportError(fmt::format("request to {} failed: {}", url, httplib::to_string(res.error())));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError(fmt::format("{} returned HTTP {}", url, res->status), 1, res->status, retry_after(res));
  }
  Response out;
  out.status = res->status;
  out.body = res->body;
  for (const auto& [k, v] : res->headers) out.headers[k] = v;
  return out;
}

httplib::Client make_client(const Endpoint& endpoint, const SplitUrl& url) {
  httplib::Client client(url.origin);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(endpoint.timeout);
  client.set_write_timeout(endpoint.timeout);
  if (endpoint.bearer_token) client.set_bearer_token_auth(*endpoint.bearer_token);
  return client;
}

}  // namespace

std::optional<std::string> env_secret(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

std::string join_path(std::string_view base_url, std::string_view path) {
  SplitUrl url = split(base_url);
  std::string p(path);
  if (!p.empty() && p.front() != '/') p.insert(p.begin(), '/');
  return url.prefix + p;
}

Response post(const Endpoint& endpoint, std::string_view path, const std::string& body, std::string_view content_type) {
  SplitUrl url = split(endpoint.base_url);
  auto client = make_client(endpoint, url);
  std::string full = join_path(endpoint.base_url, path);
  return finish(client.Post(full, body, std::string(content_type)), url.origin + full);
}

Response get(const Endpoint& endpoint, std::string_view path) {
  SplitUrl url = split(endpoint.base_url);
  auto client = make_client(endpoint, url);
  std::string full = join_path(endpoint.base_url, path);
  return finish(client.Get(full), url.origin + full);
}

}  // namespace nudgex::http
