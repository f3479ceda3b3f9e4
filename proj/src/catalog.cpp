#include "nudgex/catalog.hpp"

#include "nudgex/error.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <regex>
#include <set>

#include <fmt/format.h>

namespace nudgex::catalog {

using nlohmann::json;

json to_json(const MiningSite& s) {
  return json{{"site_id", s.site_id},         {"name", s.name},       {"lat", s.latitude},
              {"lon", s.longitude},           {"country", s.country}, {"commodities", s.commodities},
              {"created_at", format_timestamp(s.created_at)}};
}

MiningSite site_from_json(const json& j) {
  MiningSite s;
  s.site_id = j.at("site_id").get<std::string>();
  s.name = j.at("name").get<std::string>();
  s.latitude = j.at("lat").get<double>();
  s.longitude = j.at("lon").get<double>();
  s.country = j.at("country").get<std::string>();
  s.commodities = j.at("commodities").get<std::vector<std::string>>();
  s.created_at = parse_timestamp(j.at("created_at").get<std::string>());
  return s;
}

json to_json(const SiteDossier& d) {
  return json{{"site_id", d.site_id},
              {"geology", d.geology},
              {"history", d.history},
              {"controversies", d.controversies},
              {"sources", d.sources}};
}

SiteDossier dossier_from_json(const json& j) {
  return SiteDossier{j.at("site_id").get<std::string>(), j.at("geology").get<std::string>(),
                     j.at("history").get<std::string>(), j.at("controversies").get<std::string>(),
                     j.value("sources", std::vector<std::string>{})};
}

bool is_valid_site_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-'; });
}

bool is_absolute_url(std::string_view url) {
  static const std::regex re(R"(^[A-Za-z][A-Za-z0-9+.\-]*://[^\s/?#]+[^\s]*$)");
  return std::regex_match(url.begin(), url.end(), re);
}

std::size_t IngestReport::duplicates() const {
  return static_cast<std::size_t>(
      std::count_if(rejections.begin(), rejections.end(), [](const RowRejection& r) { return r.duplicate; }));
}

// ---------------------------------------------------------------- dossiers

namespace {

constexpr std::array<std::string_view, 3> kSections = {"geology", "history", "controversies"};

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

std::string join_trimmed(const std::vector<std::string>& lines) {
  auto blank = [](const std::string& l) { return trim(l).empty(); };
  auto b = std::find_if_not(lines.begin(), lines.end(), blank);
  auto e = std::find_if_not(lines.rbegin(), lines.rend(), blank).base();
  std::string out;
  for (auto it = b; it < e; ++it) {
    if (it != b) out += '\n';
    out += *it;
  }
  return out;
}

}  // namespace

ParsedDossier parse_dossier(std::string_view site_id, std::string_view document) {
  std::map<std::string, std::vector<std::string>> sections;
  std::vector<std::string> warnings;
  std::string current;
  for (const auto& line : split_lines(document)) {
    if (line.rfind("##", 0) == 0 && (line.size() == 2 || line[2] != '#')) {
      std::string name = to_lower(trim(std::string_view(line).substr(2)));
      if (sections.count(name)) throw Error(Errc::format, fmt::format("duplicate section '## {}'", name));
      bool known = name == "sources" || std::find(kSections.begin(), kSections.end(), name) != kSections.end();
      if (!known) warnings.push_back(fmt::format("unknown section '## {}' ignored", name));
      sections[name];
      current = name;
      continue;
    }
    if (!current.empty()) sections[current].push_back(line);
  }

  ParsedDossier out;
  out.dossier.site_id = std::string(site_id);
  for (std::string_view name : kSections) {
    auto it = sections.find(std::string(name));
    if (it == sections.end()) throw Error(Errc::format, fmt::format("missing section header '## {}'", name));
    std::string text = join_trimmed(it->second);
    if (text.empty()) warnings.push_back(fmt::format("{} section is empty", name));
    if (name == "geology") out.dossier.geology = std::move(text);
    if (name == "history") out.dossier.history = std::move(text);
    if (name == "controversies") out.dossier.controversies = std::move(text);
  }
  if (auto it = sections.find("sources"); it != sections.end()) {
    for (const auto& raw : it->second) {
      std::string line = trim(raw);
      if (line.rfind("- ", 0) == 0 || line.rfind("* ", 0) == 0) line = trim(line.substr(2));
      if (line.empty()) continue;
      if (!is_absolute_url(line)) throw Error(Errc::format, fmt::format("source '{}' is not an absolute URL", line));
      out.dossier.sources.push_back(line);
    }
  }
  out.warnings = std::move(warnings);
  return out;
}

std::string render_dossier(const SiteDossier& d) {
  std::string out = fmt::format("## geology\n{}\n\n## history\n{}\n\n## controversies\n{}\n", d.geology, d.history,
                                d.controversies);
  if (!d.sources.empty()) {
    out += "\n## sources\n";
    for (const auto& s : d.sources) out += s + "\n";
  }
  return out;
}

std::string dossier_prompt_text(const SiteDossier& d) {
  auto or_none = [](const std::string& s) { return s.empty() ? std::string("(no information recorded)") : s; };
  return fmt::format("Geology:\n{}\n\nHistory:\n{}\n\nControversies:\n{}", or_none(d.geology), or_none(d.history),
                     or_none(d.controversies));
}

// ---------------------------------------------------------------- catalog

namespace {

// RFC 4180 style: quoted fields may hold commas, quotes ("") and newlines.
std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error(Errc::parse, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

double number_field(const json& row, const char* key) {
  const json& v = row.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    std::string s = trim(v.get<std::string>());
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw Error(Errc::format, fmt::format("{} '{}' is not a number", key, s));
    return d;
  }
  throw Error(Errc::format, fmt::format("{} must be a number", key));
}

std::vector<std::string> commodity_list(const json& v) {
  std::vector<std::string> raw;
  if (v.is_array()) {
    for (const auto& e : v) raw.push_back(e.get<std::string>());
  } else if (v.is_string()) {
    std::string s = v.get<std::string>();
    std::size_t start = 0;
    while (start <= s.size()) {
      std::size_t end = s.find_first_of(";|", start);
      if (end == std::string::npos) end = s.size();
      raw.push_back(s.substr(start, end - start));
      start = end + 1;
    }
  } else if (!v.is_null()) {
    throw Error(Errc::format, "commodities must be a string or list");
  }
  std::vector<std::string> out;
  for (const auto& c : raw) {
    std::string t = to_lower(trim(c));
    if (!t.empty() && std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

}  // namespace

Catalog::Catalog(fs::path root, Clock clock) : root_(std::move(root)), clock_(std::move(clock)) {
  fs::path sites = root_ / "sites.jsonl";
  if (fs::exists(sites)) {
    std::size_t n = 0;
    for (const auto& line : read_lines(sites)) {
      ++n;
      try {
        MiningSite s = site_from_json(json::parse(line));
        sites_.emplace(s.site_id, std::move(s));
      } catch (const std::exception& e) {
        throw Error(Errc::parse, fmt::format("{} line {}: {}", sites.string(), n, e.what()));
      }
    }
  }
  fs::path dossiers = root_ / "dossiers";
  if (fs::exists(dossiers)) {
    for (const auto& entry : fs::directory_iterator(dossiers)) {
      if (entry.path().extension() != ".json") continue;
      SiteDossier d = dossier_from_json(json::parse(read_file(entry.path())));
      dossiers_.emplace(d.site_id, std::move(d));
    }
  }
}

MiningSite Catalog::validate_row(const json& row) const {
  MiningSite s;
  if (!row.contains("site_id") || !row["site_id"].is_string()) throw Error(Errc::format, "missing site_id");
  s.site_id = trim(row["site_id"].get<std::string>());
  if (!is_valid_site_id(s.site_id)) {
    throw Error(Errc::format, fmt::format("site_id '{}' must match [a-z0-9-]{{1,64}}", s.site_id));
  }
  for (const char* key : {"name", "lat", "lon", "country"}) {
    if (!row.contains(key) || row[key].is_null()) throw Error(Errc::format, fmt::format("missing column {}", key));
  }
  s.name = trim(row["name"].get<std::string>());
  if (s.name.empty()) throw Error(Errc::format, "name is empty");
  s.latitude = number_field(row, "lat");
  s.longitude = number_field(row, "lon");
  if (!(s.latitude >= -90.0 && s.latitude <= 90.0)) {
    throw Error(Errc::range, fmt::format("latitude {} outside [-90, 90]", s.latitude));
  }
  if (!(s.longitude >= -180.0 && s.longitude <= 180.0)) {
    throw Error(Errc::range, fmt::format("longitude {} outside [-180, 180]", s.longitude));
  }
  std::string country = trim(row["country"].get<std::string>());
  if (country.size() != 2 || !std::isalpha(static_cast<unsigned char>(country[0])) ||
      !std::isalpha(static_cast<unsigned char>(country[1]))) {
    throw Error(Errc::format, fmt::format("country '{}' is not an ISO 3166-1 alpha-2 code", country));
  }
  for (char& c : country) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  s.country = country;
  s.commodities = commodity_list(row.value("commodities", json()));
  auto created = row.find("created_at");
  if (created != row.end() && created->is_string() && !created->get<std::string>().empty()) {
    s.created_at = parse_timestamp(created->get<std::string>());
  } else {
    s.created_at = clock_();
  }
  return s;
}

IngestReport Catalog::ingest_rows(const std::vector<std::pair<std::size_t, json>>& rows,
                                  std::vector<RowRejection> parse_failures, std::size_t total) {
  IngestReport report;
  report.total = total;
  report.rejections = std::move(parse_failures);
  std::unique_lock lock(mutex_);
  std::set<std::string> seen;
  for (const auto& [row_number, row] : rows) {
    std::string id = row.contains("site_id") && row["site_id"].is_string() ? row["site_id"].get<std::string>() : "";
    try {
      MiningSite site = validate_row(row);
      if (sites_.count(site.site_id) || seen.count(site.site_id)) {
        report.rejections.push_back({row_number, site.site_id, "duplicate site_id", true});
        continue;
      }
      append_line(root_ / "sites.jsonl", to_json(site).dump());
      seen.insert(site.site_id);
      report.accepted_ids.push_back(site.site_id);
      sites_.emplace(site.site_id, std::move(site));
      ++report.accepted;
    } catch (const Error& e) {
      report.rejections.push_back({row_number, id, e.what(), false});
    } catch (const json::exception& e) {
      report.rejections.push_back({row_number, id, fmt::format("format_error: {}", e.what()), false});
    }
  }
  std::sort(report.rejections.begin(), report.rejections.end(),
            [](const RowRejection& a, const RowRejection& b) { return a.row < b.row; });
  return report;
}

IngestReport Catalog::ingest_csv(std::string_view text) {
  auto table = parse_csv(text);
  if (table.empty()) return IngestReport{};
  std::vector<std::string> header;
  for (const auto& h : table.front()) header.push_back(to_lower(trim(h)));
  for (const char* required : {"site_id", "name", "lat", "lon", "country"}) {
    if (std::find(header.begin(), header.end(), required) == header.end()) {
      throw Error(Errc::format, fmt::format("CSV header lacks column '{}'", required));
    }
  }
  std::vector<std::pair<std::size_t, json>> rows;
  std::vector<RowRejection> failures;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& cells = table[r];
    if (cells.size() != header.size()) {
      failures.push_back({r, cells.empty() ? "" : cells[0],
                          fmt::format("format_error: row has {} fields, header has {}", cells.size(), header.size()),
                          false});
      continue;
    }
    json row = json::object();
    for (std::size_t c = 0; c < header.size(); ++c) row[header[c]] = cells[c];
    rows.emplace_back(r, std::move(row));
  }
  return ingest_rows(rows, std::move(failures), table.size() - 1);
}

IngestReport Catalog::ingest_jsonl(std::string_view text) {
  std::vector<std::pair<std::size_t, json>> rows;
  std::vector<RowRejection> failures;
  std::size_t n = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    ++n;
    try {
      json row = json::parse(line);
      if (!row.is_object()) throw Error(Errc::format, "row is not a JSON object");
      rows.emplace_back(n, std::move(row));
    } catch (const std::exception& e) {
      failures.push_back({n, "", fmt::format("format_error: {}", e.what()), false});
    }
  }
  return ingest_rows(rows, std::move(failures), n);
}

IngestReport Catalog::ingest_sites(const fs::path& file) {
  std::string text = read_file(file);
  std::string ext = to_lower(file.extension().string());
  if (ext == ".jsonl" || ext == ".ndjson" || ext == ".json") return ingest_jsonl(text);
  return ingest_csv(text);
}

ParsedDossier Catalog::ingest_dossier(std::string_view site_id, std::string_view document) {
  std::unique_lock lock(mutex_);
  if (!sites_.count(site_id)) throw Error(Errc::not_found, fmt::format("unknown site '{}'", site_id));
  ParsedDossier parsed = parse_dossier(site_id, document);
  write_file_atomic(root_ / "dossiers" / (std::string(site_id) + ".json"), to_json(parsed.dossier).dump(2) + "\n");
  dossiers_[std::string(site_id)] = parsed.dossier;
  return parsed;
}

ParsedDossier Catalog::ingest_dossier_file(std::string_view site_id, const fs::path& file) {
  return ingest_dossier(site_id, read_file(file));
}

std::vector<MiningSite> Catalog::list_sites(const SiteFilter& filter) const {
  std::shared_lock lock(mutex_);
  std::vector<MiningSite> out;
  std::string country = filter.country ? to_lower(*filter.country) : "";
  std::string commodity = filter.commodity ? to_lower(*filter.commodity) : "";
  for (const auto& [id, site] : sites_) {  // std::map: ascending site_id
    if (filter.country && to_lower(site.country) != country) continue;
    if (filter.commodity &&
        std::find(site.commodities.begin(), site.commodities.end(), commodity) == site.commodities.end()) {
      continue;
    }
    out.push_back(site);
  }
  return out;
}

std::optional<MiningSite> Catalog::find_site(std::string_view site_id) const {
  std::shared_lock lock(mutex_);
  auto it = sites_.find(site_id);
  if (it == sites_.end()) return std::nullopt;
  return it->second;
}

MiningSite Catalog::site(std::string_view site_id) const {
  auto s = find_site(site_id);
  if (!s) throw Error(Errc::not_found, fmt::format("unknown site '{}'", site_id));
  return *s;
}

std::optional<SiteDossier> Catalog::dossier(std::string_view site_id) const {
  std::shared_lock lock(mutex_);
  auto it = dossiers_.find(site_id);
  if (it == dossiers_.end()) return std::nullopt;
  return it->second;
}

std::string Catalog::export_dossier(std::string_view site_id) const {
  auto d = dossier(site_id);
  if (!d) throw Error(Errc::not_found, fmt::format("no dossier for site '{}'", site_id));
  return render_dossier(*d);
}

std::size_t Catalog::size() const {
  std::shared_lock lock(mutex_);
  return sites_.size();
}

}  // namespace nudgex::catalog
