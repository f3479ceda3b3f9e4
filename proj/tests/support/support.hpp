#pragma once

#include "nudgex/gateway/config.hpp"
#include "nudgex/gateway/fixtures.hpp"
#include "nudgex/gateway/workspace.hpp"
#include "nudgex/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace nxtest {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "nudgex-test-XXXXXX").string();
    char* made = ::mkdtemp(pattern.data());
    if (!made) throw std::runtime_error("mkdtemp failed");
    path_ = made;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

// ---- independent oracles -------------------------------------------------

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kRadiusKm = 6371.0088;

inline double deg2rad(double d) { return d * kPi / 180.0; }

/// Textbook haversine.
inline double haversine_oracle(double lat1, double lon1, double lat2, double lon2) {
  double p1 = deg2rad(lat1), p2 = deg2rad(lat2);
  double dp = p2 - p1, dl = deg2rad(lon2 - lon1);
  double a = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2 * kRadiusKm * std::asin(std::sqrt(a));
}

/// Area of a lat/lon box on the sphere: R^2 * dlon * (sin n - sin s).
inline double box_area_oracle(double west, double south, double east, double north) {
  double dlon = east - west;
  if (dlon < 0) dlon += 360.0;
  return kRadiusKm * kRadiusKm * deg2rad(dlon) * (std::sin(deg2rad(north)) - std::sin(deg2rad(south)));
}

/// Inclusive rubric gate, written out longhand.
inline bool gate_oracle(const std::array<int, 5>& s, double theta_avg = 4.0, int theta_min = 3) {
  int total = 0;
  int lowest = 99;
  for (int v : s) {
    total += v;
    if (v < lowest) lowest = v;
  }
  return total >= theta_avg * 5 && lowest >= theta_min;
}

struct OracleHit {
  std::size_t index;
  double score;
};

/// Full scan, cosine in double, ties by id.
inline std::vector<OracleHit> brute_force_topk(const std::vector<std::vector<float>>& data,
                                               const std::vector<std::string>& ids, const std::vector<float>& q,
                                               std::size_t k) {
  double qn = 0;
  for (float v : q) qn += double(v) * v;
  qn = std::sqrt(qn);
  std::vector<OracleHit> all;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double dot = 0, dn = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      dot += double(q[j]) * data[i][j];
      dn += double(data[i][j]) * data[i][j];
    }
    all.push_back({i, dot / (qn * std::sqrt(dn))});
  }
  std::sort(all.begin(), all.end(), [&](const OracleHit& a, const OracleHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return ids[a.index] < ids[b.index];
  });
  all.resize(std::min(k, all.size()));
  return all;
}

inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(dim);
  double s = 0;
  for (auto& x : v) {
    x = n(rng);
    s += double(x) * x;
  }
  s = std::sqrt(s);
  for (auto& x : v) x = static_cast<float>(x / s);
  return v;
}

// ---- fixture workspaces --------------------------------------------------

/// The demo corpus written into a temp dir plus a Workspace over it.
struct FixtureWorld {
  TempDir dir;
  nudgex::gateway::fixtures::FixturePaths paths;
  nudgex::gateway::ApiConfig config;

  explicit FixtureWorld(std::vector<std::string> site_ids = {}) {
    nudgex::gateway::fixtures::FixtureOptions options;
    options.site_ids = std::move(site_ids);
    paths = nudgex::gateway::fixtures::write_fixtures(dir.path(), options);
    config = nudgex::gateway::load_config(paths.config);
  }

  std::unique_ptr<nudgex::gateway::Workspace> workspace() const {
    return std::make_unique<nudgex::gateway::Workspace>(config, nudgex::gateway::make_providers(config));
  }
};

/// ingest, acquire, approve every auto-passing scene, caption, judge, index.
inline void run_full_pipeline(nudgex::gateway::Workspace& ws, const FixtureWorld& world) {
  ws.ingest(world.paths.sites_csv, world.paths.dossiers);
  ws.acquire();
  for (const auto& scene : ws.scenes().list()) {
    if (scene.review_state == nudgex::eo::ReviewState::pending && scene.quality.auto_pass) {
      ws.review_scene(scene.scene_id, "approve", "fixture-reviewer");
    }
  }
  ws.caption();
  ws.judge();
  ws.rag_index();
}

}  // namespace nxtest
