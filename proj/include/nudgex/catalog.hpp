#pragma once

#include "nudgex/util.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace nudgex::catalog {

struct MiningSite {
  std::string site_id;
  std::string name;
  double latitude = 0.0;
  double longitude = 0.0;
  std::string country;  // ISO 3166-1 alpha-2
  std::vector<std::string> commodities;
  Timestamp created_at{};

  friend bool operator==(const MiningSite&, const MiningSite&) = default;
};

struct SiteDossier {
  std::string site_id;
  std::string geology;
  std::string history;
  std::string controversies;
  std::vector<std::string> sources;

  friend bool operator==(const SiteDossier&, const SiteDossier&) = default;
};

nlohmann::json to_json(const MiningSite& site);
MiningSite site_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SiteDossier& dossier);
SiteDossier dossier_from_json(const nlohmann::json& j);

bool is_valid_site_id(std::string_view id);
bool is_absolute_url(std::string_view url);

struct RowRejection {
  std::size_t row = 0;  // 1-based data row
  std::string site_id;
  std::string reason;
  bool duplicate = false;
};

struct IngestReport {
  std::size_t total = 0;
  std::size_t accepted = 0;
  std::vector<std::string> accepted_ids;  // in row order
  std::vector<RowRejection> rejections;

  std::size_t duplicates() const;
};

struct ParsedDossier {
  SiteDossier dossier;
  std::vector<std::string> warnings;
};

/// Parses a `## geology` / `## history` / `## controversies` document, with
/// an optional `## sources` section of one URL per line. Throws format error
/// when a mandatory header is missing or a source is not an absolute URL.
ParsedDossier parse_dossier(std::string_view site_id, std::string_view document);

/// Inverse of parse_dossier, modulo surrounding blank lines and '\r'.
std::string render_dossier(const SiteDossier& dossier);

/// Dossier text as the captioner sees it: three labelled sections.
std::string dossier_prompt_text(const SiteDossier& dossier);

struct SiteFilter {
  std::optional<std::string> country;
  std::optional<std::string> commodity;
};

/// Site registry persisted under `<root>/sites.jsonl` (append-only) and
/// `<root>/dossiers/<site_id>.json`. Readers share a lock; ingestion is
/// exclusive.
class Catalog {
 public:
  explicit Catalog(fs::path root, Clock clock = system_clock());

  /// CSV (header row) or JSONL, chosen by extension; unreadable file throws.
  IngestReport ingest_sites(const fs::path& file);
  IngestReport ingest_csv(std::string_view text);
  IngestReport ingest_jsonl(std::string_view text);

  ParsedDossier ingest_dossier(std::string_view site_id, std::string_view document);
  ParsedDossier ingest_dossier_file(std::string_view site_id, const fs::path& file);

  std::vector<MiningSite> list_sites(const SiteFilter& filter = {}) const;
  std::optional<MiningSite> find_site(std::string_view site_id) const;
  /// Throws not_found.
  MiningSite site(std::string_view site_id) const;
  std::optional<SiteDossier> dossier(std::string_view site_id) const;
  std::string export_dossier(std::string_view site_id) const;

  std::size_t size() const;
  const fs::path& root() const { return root_; }

 private:
  IngestReport ingest_rows(const std::vector<std::pair<std::size_t, nlohmann::json>>& rows,
                           std::vector<RowRejection> parse_failures, std::size_t total);
  MiningSite validate_row(const nlohmann::json& row) const;

  fs::path root_;
  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, MiningSite, std::less<>> sites_;
  std::map<std::string, SiteDossier, std::less<>> dossiers_;
};

}  // namespace nudgex::catalog
