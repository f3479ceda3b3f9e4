#pragma once

#include "nudgex/eo/plan.hpp"
#include "nudgex/judge/judge.hpp"
#include "nudgex/raster/indices.hpp"
#include "nudgex/util.hpp"

#include <optional>
#include <string>
#include <vector>

namespace nudgex::gateway {

/// One chat or embedding provider. `provider` is "stub" or "http"; the key
/// is read from `api_key_env` at startup and never from the file.
struct ProviderConfig {
  std::string provider = "stub";
  std::string base_url;
  std::string model;
  std::string api_key_env;
  int max_attempts = 3;
  int backoff_ms = 500;
  int timeout_s = 60;
};

struct EoConfig {
  std::string provider = "fixture";  // fixture | openeo
  fs::path manifest;                 // fixture provider
  std::string base_url = "https://openeo.dataspace.copernicus.eu/openeo/1.2";
  std::string collection = "SENTINEL2_L2A";
  int max_attempts = 3;
  int backoff_ms = 1000;
};

struct CaptionerConfig {
  ProviderConfig chat{"stub", "", "stub-captioner", "NUDGEX_MLLM_API_KEY"};
  fs::path fixture_captions;  // stub provider only; optional
  fs::path system_prompt;     // empty = shipped default
  fs::path shots;             // empty = shipped default
  std::vector<std::string> indices = {"NDVI", "NDWI", "NDBI", "BSI", "IRONOX"};
  double temperature = 0.2;
};

struct JudgeConfig {
  ProviderConfig chat{"stub", "", "stub-judge", "NUDGEX_JUDGE_API_KEY"};
  double theta_avg = 4.0;
  int theta_min = 3;
  int parse_attempts = 2;
};

struct EmbeddingConfig {
  ProviderConfig service{"stub", "", "all-MiniLM-L6-v2", "NUDGEX_EMBED_API_KEY"};
  std::size_t dimension = 384;
};

struct RagConfig {
  ProviderConfig chat{"stub", "", "stub-generator", "NUDGEX_RAG_API_KEY"};
  std::size_t k = 5;
  double temperature = 0.2;
};

struct ApiConfig {
  fs::path data_root = "data";
  std::string bind = "127.0.0.1:8080";
  std::optional<Timestamp> fixed_time;  // pins every stamped time
  fs::path ui_dir;                      // static files served at /
  std::size_t parallelism = 4;

  eo::AcquisitionConfig acquisition;
  EoConfig eo;
  CaptionerConfig captioner;
  JudgeConfig judge;
  EmbeddingConfig embedding;
  RagConfig rag;
  raster::IndexRegistry indices = raster::IndexRegistry::defaults();

  /// Range checks on every threshold; throws config error.
  void validate() const;
  judge::Rubric rubric() const;
  Clock clock() const;
};

/// Parses TOML. Relative paths resolve against `base_dir`. Unknown keys and
/// out-of-range values are config errors.
ApiConfig parse_config(std::string_view toml_text, const fs::path& base_dir);
ApiConfig load_config(const fs::path& file);

/// host and port from "host:port" (port required).
std::pair<std::string, int> split_bind(std::string_view bind);

}  // namespace nudgex::gateway
