#include "nudgex/gateway/config.hpp"

#include "nudgex/error.hpp"

#include <toml.hpp>

#include <algorithm>
#include <array>
#include <set>

#include <fmt/format.h>

namespace nudgex::gateway {

namespace {

[[noreturn]] void fail(std::string_view where, std::string_view what) {
  throw Error(Errc::config, fmt::format("{}: {}", where, what));
}

void check_keys(const toml::table& t, std::string_view where, std::initializer_list<std::string_view> allowed) {
  for (const auto& [k, v] : t) {
    if (std::find(allowed.begin(), allowed.end(), k.str()) == allowed.end()) {
      fail(where, fmt::format("unknown key '{}'", k.str()));
    }
  }
}

std::string qualified(std::string_view where, std::string_view key) {
  return where.empty() ? std::string(key) : fmt::format("{}.{}", where, key);
}

std::optional<std::string> get_string(const toml::table& t, std::string_view where, std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if (auto v = n->value<std::string>(); v && n->is_string()) return *v;
  fail(qualified(where, key), "expected a string");
}

std::optional<double> get_double(const toml::table& t, std::string_view where, std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if (n->is_floating_point() || n->is_integer()) return n->value<double>();
  fail(qualified(where, key), "expected a number");
}

std::optional<std::int64_t> get_int(const toml::table& t, std::string_view where, std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if (n->is_integer()) return n->value<std::int64_t>();
  fail(qualified(where, key), "expected an integer");
}

std::optional<std::vector<std::string>> get_strings(const toml::table& t, std::string_view where,
                                                    std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  const toml::array* a = n->as_array();
  if (!a) fail(qualified(where, key), "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *a) {
    if (!e.is_string()) fail(qualified(where, key), "expected an array of strings");
    out.push_back(*e.value<std::string>());
  }
  return out;
}

std::optional<Date> get_date(const toml::table& t, std::string_view where, std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if (const auto* d = n->as_date()) {
    const toml::date& v = d->get();
    return Date{std::chrono::year{v.year}, std::chrono::month{v.month}, std::chrono::day{v.day}};
  }
  if (n->is_string()) {
    try {
      return parse_date(*n->value<std::string>());
    } catch (const Error& e) {
      fail(qualified(where, key), e.detail());
    }
  }
  fail(qualified(where, key), "expected a date");
}

std::optional<Timestamp> get_timestamp(const toml::table& t, std::string_view where, std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return std::nullopt;
  if (n->is_string()) {
    try {
      return parse_timestamp(*n->value<std::string>());
    } catch (const Error& e) {
      fail(qualified(where, key), e.detail());
    }
  }
  if (const auto* dt = n->as_date_time()) {
    const toml::date_time& v = dt->get();
    if (v.offset && v.offset->minutes != 0) fail(qualified(where, key), "must be UTC");
    Date d{std::chrono::year{v.date.year}, std::chrono::month{v.date.month}, std::chrono::day{v.date.day}};
    return std::chrono::sys_days{d} + std::chrono::hours{v.time.hour} + std::chrono::minutes{v.time.minute} +
           std::chrono::seconds{v.time.second};
  }
  fail(qualified(where, key), "expected a UTC timestamp");
}

const toml::table* get_table(const toml::table& t, std::string_view key) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  if (!n->is_table()) fail(key, "expected a table");
  return n->as_table();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void read_provider(const toml::table& t, std::string_view where, ProviderConfig& p) {
  if (auto v = get_string(t, where, "provider")) p.provider = *v;
  if (auto v = get_string(t, where, "base_url")) p.base_url = *v;
  if (auto v = get_string(t, where, "model")) p.model = *v;
  if (auto v = get_int(t, where, "max_attempts")) p.max_attempts = static_cast<int>(*v);
  if (auto v = get_int(t, where, "backoff_ms")) p.backoff_ms = static_cast<int>(*v);
  if (auto v = get_int(t, where, "timeout_s")) p.timeout_s = static_cast<int>(*v);
}

constexpr std::array<std::string_view, 6> kProviderKeys = {"provider", "base_url", "model", "max_attempts",
                                                                    "backoff_ms", "timeout_s"};

template <class... Extra>
void check_provider_keys(const toml::table& t, std::string_view where, Extra... extra) {
  std::vector<std::string_view> allowed(kProviderKeys.begin(), kProviderKeys.end());
  (allowed.push_back(extra), ...);
  for (const auto& [k, v] : t) {
    if (std::find(allowed.begin(), allowed.end(), k.str()) == allowed.end()) {
      fail(where, fmt::format("unknown key '{}'", k.str()));
    }
  }
}

void validate_provider(const ProviderConfig& p, std::string_view where) {
  if (p.provider != "stub" && p.provider != "http") fail(where, fmt::format("provider '{}' is not stub|http", p.provider));
  if (p.provider == "http" && p.base_url.empty()) fail(where, "http provider needs base_url");
  if (p.model.empty()) fail(where, "model is empty");
  if (p.max_attempts < 1 || p.max_attempts > 10) fail(where, "max_attempts must be in 1..10");
  if (p.backoff_ms < 0 || p.backoff_ms > 60000) fail(where, "backoff_ms must be in 0..60000");
  if (p.timeout_s < 1 || p.timeout_s > 600) fail(where, "timeout_s must be in 1..600");
}

}  // namespace

void ApiConfig::validate() const {
  try {
    acquisition.validate();
  } catch (const Error& e) {
    fail("acquisition", e.detail());
  }
  if (parallelism < 1 || parallelism > 64) fail("parallelism", "must be in 1..64");
  split_bind(bind);
  if (eo.provider != "fixture" && eo.provider != "openeo") fail("eo", fmt::format("provider '{}' is not fixture|openeo", eo.provider));
  validate_provider(captioner.chat, "captioner");
  validate_provider(judge.chat, "judge");
  validate_provider(embedding.service, "embedding");
  validate_provider(rag.chat, "rag");
  if (captioner.temperature < 0.0 || captioner.temperature > 2.0) fail("captioner.temperature", "must be in [0, 2]");
  for (const auto& name : captioner.indices) {
    if (!indices.contains(name)) fail("captioner.indices", fmt::format("unknown index '{}'", name));
  }
  try {
    rubric().validate();
  } catch (const Error& e) {
    fail("judge", e.detail());
  }
  if (judge.parse_attempts < 1 || judge.parse_attempts > 10) fail("judge.parse_attempts", "must be in 1..10");
  if (embedding.dimension < 1 || embedding.dimension > 8192) fail("embedding.dimension", "must be in 1..8192");
  if (rag.k < 1 || rag.k > 100) fail("rag.k", "must be in 1..100");
}

judge::Rubric ApiConfig::rubric() const {
  judge::Rubric r = judge::Rubric::defaults();
  r.theta_avg = judge.theta_avg;
  r.theta_min = judge.theta_min;
  return r;
}

Clock ApiConfig::clock() const { return fixed_time ? fixed_clock(*fixed_time) : system_clock(); }

std::pair<std::string, int> split_bind(std::string_view bind) {
  std::size_t colon = bind.rfind(':');
  if (colon == std::string_view::npos || colon == 0) fail("bind", fmt::format("'{}' is not host:port", bind));
  int port = 0;
  try {
    port = std::stoi(std::string(bind.substr(colon + 1)));
  } catch (const std::exception&) {
    fail("bind", fmt::format("'{}' has no numeric port", bind));
  }
  if (port < 0 || port > 65535) fail("bind", "port out of range");
  return {std::string(bind.substr(0, colon)), port};
}

ApiConfig parse_config(std::string_view toml_text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    throw Error(Errc::config, fmt::format("TOML line {}: {}", e.source().begin.line, e.description()));
  }
  check_keys(root, "config",
             {"data_root", "bind", "fixed_time", "ui_dir", "parallelism", "acquisition", "eo", "captioner", "judge",
              "embedding", "rag", "indices"});
  ApiConfig c;
  c.data_root = resolve(base_dir, "data");
  if (auto v = get_string(root, "", "data_root")) c.data_root = resolve(base_dir, *v);
  if (auto v = get_string(root, "", "bind")) c.bind = *v;
  c.fixed_time = get_timestamp(root, "", "fixed_time");
  if (auto v = get_string(root, "", "ui_dir")) c.ui_dir = resolve(base_dir, *v);
  if (auto v = get_int(root, "", "parallelism")) {
    if (*v < 1) fail("parallelism", "must be positive");
    c.parallelism = static_cast<std::size_t>(*v);
  }

  if (const auto* t = get_table(root, "acquisition")) {
    check_keys(*t, "acquisition",
               {"area_km2", "max_cloud_fraction", "date_start", "date_end", "horizon_cutoff", "snow_latitude",
                "max_latitude"});
    auto& a = c.acquisition;
    if (auto v = get_double(*t, "acquisition", "area_km2")) a.area_km2 = *v;
    if (auto v = get_double(*t, "acquisition", "max_cloud_fraction")) a.max_cloud_fraction = *v;
    if (auto v = get_date(*t, "acquisition", "date_start")) a.date_start = *v;
    if (auto v = get_date(*t, "acquisition", "date_end")) a.date_end = *v;
    if (auto v = get_date(*t, "acquisition", "horizon_cutoff")) a.horizon_cutoff = *v;
    if (auto v = get_double(*t, "acquisition", "snow_latitude")) a.snow_latitude = *v;
    if (auto v = get_double(*t, "acquisition", "max_latitude")) a.max_latitude = *v;
  }

  if (const auto* t = get_table(root, "eo")) {
    check_keys(*t, "eo", {"provider", "manifest", "base_url", "collection", "max_attempts", "backoff_ms"});
    if (auto v = get_string(*t, "eo", "provider")) c.eo.provider = *v;
    if (auto v = get_string(*t, "eo", "manifest")) c.eo.manifest = resolve(base_dir, *v);
    if (auto v = get_string(*t, "eo", "base_url")) c.eo.base_url = *v;
    if (auto v = get_string(*t, "eo", "collection")) c.eo.collection = *v;
    if (auto v = get_int(*t, "eo", "max_attempts")) c.eo.max_attempts = static_cast<int>(*v);
    if (auto v = get_int(*t, "eo", "backoff_ms")) c.eo.backoff_ms = static_cast<int>(*v);
  }

  if (const auto* t = get_table(root, "captioner")) {
    check_provider_keys(*t, "captioner", "fixture_captions", "system_prompt", "shots", "indices", "temperature");
    read_provider(*t, "captioner", c.captioner.chat);
    if (auto v = get_string(*t, "captioner", "fixture_captions")) c.captioner.fixture_captions = resolve(base_dir, *v);
    if (auto v = get_string(*t, "captioner", "system_prompt")) c.captioner.system_prompt = resolve(base_dir, *v);
    if (auto v = get_string(*t, "captioner", "shots")) c.captioner.shots = resolve(base_dir, *v);
    if (auto v = get_strings(*t, "captioner", "indices")) c.captioner.indices = *v;
    if (auto v = get_double(*t, "captioner", "temperature")) c.captioner.temperature = *v;
  }

  if (const auto* t = get_table(root, "judge")) {
    check_provider_keys(*t, "judge", "theta_avg", "theta_min", "parse_attempts");
    read_provider(*t, "judge", c.judge.chat);
    if (auto v = get_double(*t, "judge", "theta_avg")) c.judge.theta_avg = *v;
    if (auto v = get_int(*t, "judge", "theta_min")) c.judge.theta_min = static_cast<int>(*v);
    if (auto v = get_int(*t, "judge", "parse_attempts")) c.judge.parse_attempts = static_cast<int>(*v);
  }

  if (const auto* t = get_table(root, "embedding")) {
    check_provider_keys(*t, "embedding", "dimension");
    read_provider(*t, "embedding", c.embedding.service);
    if (auto v = get_int(*t, "embedding", "dimension")) {
      if (*v < 1) fail("embedding.dimension", "must be positive");
      c.embedding.dimension = static_cast<std::size_t>(*v);
    }
  }

  if (const auto* t = get_table(root, "rag")) {
    check_provider_keys(*t, "rag", "k", "temperature");
    read_provider(*t, "rag", c.rag.chat);
    if (auto v = get_int(*t, "rag", "k")) {
      if (*v < 1) fail("rag.k", "must be positive");
      c.rag.k = static_cast<std::size_t>(*v);
    }
    if (auto v = get_double(*t, "rag", "temperature")) c.rag.temperature = *v;
  }

  if (const auto* t = get_table(root, "indices")) {
    for (const auto& [name, node] : *t) {
      std::string where = fmt::format("indices.{}", name.str());
      if (!node.is_table()) fail(where, "expected a table");
      const toml::table& it = *node.as_table();
      check_keys(it, where, {"expression", "min", "max", "threshold", "label"});
      raster::IndexDefinition def;
      def.name = std::string(name.str());
      if (c.indices.contains(def.name)) def = c.indices.get(def.name);
      if (auto v = get_string(it, where, "expression")) def.expression = *v;
      if (def.expression.empty()) fail(where, "expression is required");
      if (auto v = get_double(it, where, "min")) def.lo = *v;
      if (auto v = get_double(it, where, "max")) def.hi = *v;
      if (auto v = get_double(it, where, "threshold")) def.threshold = *v;
      if (auto v = get_string(it, where, "label")) def.threshold_label = *v;
      if (!(def.lo < def.hi)) fail(where, "min must be below max");
      try {
        c.indices.add(std::move(def));
      } catch (const Error& e) {
        fail(where, e.what());
      }
    }
  }

  c.validate();
  return c;
}

ApiConfig load_config(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw Error(Errc::config, fmt::format("config file not found: {}", file.string()));
  return parse_config(read_file(file), fs::absolute(file).parent_path());
}

}  // namespace nudgex::gateway
