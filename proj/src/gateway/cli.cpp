#include "nudgex/gateway/cli.hpp"

#include "nudgex/error.hpp"
#include "nudgex/gateway/fixtures.hpp"
#include "nudgex/gateway/server.hpp"
#include "nudgex/gateway/workspace.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <ostream>

#include <fmt/format.h>

namespace nudgex::gateway {

using nlohmann::json;

namespace {

std::atomic<ApiServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (ApiServer* s = g_server.load()) s->stop();
}

int exit_code(Errc code) {
  switch (code) {
    case Errc::config:
    case Errc::argument: return 2;
    case Errc::stage_order: return 3;
    case Errc::busy: return 4;
    default: return 1;
  }
}

Scope scope_of(const std::string& site) {
  Scope s;
  if (!site.empty()) s.site_id = site;
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mining-site image captioning and retrieval pipeline", "nudgex"};
  app.require_subcommand(1);
  std::string config_path;
  std::string data_root;
  app.add_option("--config", config_path, "TOML configuration file");
  app.add_option("--data-root", data_root, "Data root (overrides the config file)");

  std::string site;
  std::string dossiers;
  std::string sites_file;
  auto* ingest = app.add_subcommand("ingest", "Load sites (CSV or JSONL) and optional dossiers");
  ingest->add_option("sites", sites_file, "Sites file")->required();
  ingest->add_option("--dossiers", dossiers, "Directory of <site_id>.md dossiers");

  auto* acquire = app.add_subcommand("acquire", "Search, filter and store scenes for each site");
  acquire->add_option("--site", site, "Only this site");

  auto* caption = app.add_subcommand("caption", "Caption approved scenes");
  caption->add_option("--site", site, "Only this site");

  auto* judge_cmd = app.add_subcommand("judge", "Score candidate captions and export accepted pairs");
  judge_cmd->add_option("--site", site, "Only this site");

  auto* rag_index = app.add_subcommand("rag-index", "Embed accepted captions into the vector index");
  rag_index->add_option("--site", site, "Only this site");

  std::string question;
  std::size_t k = 0;
  std::string country;
  auto* query = app.add_subcommand("query", "Answer a question from indexed captions");
  query->add_option("question", question, "Question")->required();
  query->add_option("--k", k, "Number of captions to retrieve")->check(CLI::PositiveNumber);
  query->add_option("--country", country, "Restrict retrieval to an ISO country code");

  std::string bind;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--bind", bind, "host:port");

  std::string id;
  std::string verdict;
  std::string reviewer;
  auto* review_scene = app.add_subcommand("review-scene", "Approve or reject a pending scene");
  review_scene->add_option("scene_id", id)->required();
  review_scene->add_option("--verdict", verdict)->required()->check(CLI::IsMember({"approve", "reject"}));
  review_scene->add_option("--reviewer", reviewer)->required();

  auto* review_caption = app.add_subcommand("review-caption", "Confirm or reject a caption");
  review_caption->add_option("caption_id", id)->required();
  review_caption->add_option("--verdict", verdict)->required()->check(CLI::IsMember({"approve", "reject"}));
  review_caption->add_option("--reviewer", reviewer)->required();

  std::string commodity;
  auto* sites = app.add_subcommand("sites", "List catalog sites");
  sites->add_option("--country", country);
  sites->add_option("--commodity", commodity);

  auto* scenes = app.add_subcommand("scenes", "List stored scenes");
  scenes->add_option("--site", site);

  auto* captions = app.add_subcommand("captions", "List captions with their judge scores");
  captions->add_option("--site", site);

  std::string fixture_dir;
  std::vector<std::string> fixture_sites;
  auto* fixtures_cmd = app.add_subcommand("fixtures", "Write the offline demo corpus and config");
  fixtures_cmd->add_option("dir", fixture_dir)->required();
  fixtures_cmd->add_option("--sites", fixture_sites, "Subset of demo site ids")->delimiter(',');

  std::vector<const char*> argv;
  argv.push_back("nudgex");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // Help and version print and succeed; every other parse failure is a usage error.
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (fixtures_cmd->parsed()) {
      fixtures::FixtureOptions options;
      options.site_ids = fixture_sites;
      auto p = fixtures::write_fixtures(fixture_dir, options);
      out << json{{"config", p.config.string()},      {"sites", p.sites_csv.string()},
                  {"dossiers", p.dossiers.string()},  {"manifest", p.manifest.string()},
                  {"captions", p.captions.string()},  {"data_root", p.data_root.string()}}
                 .dump(2)
          << "\n";
      return 0;
    }

    ApiConfig config;
    if (!config_path.empty()) config = load_config(config_path);
    if (!data_root.empty()) config.data_root = data_root;
    if (!bind.empty()) config.bind = bind;
    config.validate();
    Workspace ws(config, make_providers(config));

    auto report = [&](const PipelineRun& run) {
      out << to_json(run).dump(2) << "\n";
      return run.ok() ? 0 : 1;
    };

    if (ingest->parsed()) {
      std::optional<fs::path> d;
      if (!dossiers.empty()) d = dossiers;
      return report(ws.ingest(sites_file, d));
    }
    if (acquire->parsed()) return report(ws.acquire(scope_of(site)));
    if (caption->parsed()) return report(ws.caption(scope_of(site)));
    if (judge_cmd->parsed()) return report(ws.judge(scope_of(site)));
    if (rag_index->parsed()) return report(ws.rag_index(scope_of(site)));
    if (query->parsed()) {
      std::optional<std::size_t> kk;
      if (k > 0) kk = k;
      std::optional<std::string> cc;
      if (!country.empty()) cc = country;
      out << rag::to_json(ws.query(question, kk, cc)).dump(2) << "\n";
      return 0;
    }
    if (review_scene->parsed()) {
      out << eo::to_json(ws.review_scene(id, verdict, reviewer)).dump(2) << "\n";
      return 0;
    }
    if (review_caption->parsed()) {
      out << captioner::to_json(ws.review_caption(id, verdict, reviewer)).dump(2) << "\n";
      return 0;
    }
    if (sites->parsed()) {
      catalog::SiteFilter f;
      if (!country.empty()) f.country = country;
      if (!commodity.empty()) f.commodity = commodity;
      json arr = json::array();
      for (const auto& s : ws.catalog().list_sites(f)) arr.push_back(catalog::to_json(s));
      out << arr.dump(2) << "\n";
      return 0;
    }
    if (scenes->parsed()) {
      json arr = json::array();
      for (const auto& s : ws.scenes().list()) {
        if (site.empty() || s.site_id == site) arr.push_back(eo::to_json(s));
      }
      out << arr.dump(2) << "\n";
      return 0;
    }
    if (captions->parsed()) {
      json arr = json::array();
      for (const auto& c : ws.captions().list()) {
        if (!site.empty() && c.site_id != site) continue;
        json j = captioner::to_json(c);
        auto s = ws.scores().find(c.caption_id);
        j["judge_score"] = s ? judge::to_json(*s) : json(nullptr);
        arr.push_back(std::move(j));
      }
      out << arr.dump(2) << "\n";
      return 0;
    }
    if (serve->parsed()) {
      ApiServer server(ws);
      server.bind(config.bind);
      err << "listening on http://" << config.bind << "\n";
      g_server = &server;
      auto prev_int = std::signal(SIGINT, on_signal);
      auto prev_term = std::signal(SIGTERM, on_signal);
      server.serve();
      std::signal(SIGINT, prev_int);
      std::signal(SIGTERM, prev_term);
      g_server = nullptr;
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace nudgex::gateway
