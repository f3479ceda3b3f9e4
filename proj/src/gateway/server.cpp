#include "nudgex/gateway/server.hpp"

#include <httplib.h>

#include <fmt/format.h>

#include <set>

namespace nudgex::gateway {

using nlohmann::json;

int http_status(Errc code) {
  switch (code) {
    case Errc::not_found:
    case Errc::unknown_index: return 404;
    case Errc::conflict: return 409;
    case Errc::argument:
    case Errc::format:
    case Errc::parse:
    case Errc::range: return 400;
    case Errc::precondition:
    case Errc::stage_order:
    case Errc::grounding_unavailable: return 422;
    case Errc::busy: return 423;
    case Errc::transport:
    case Errc::empty_response:
    case Errc::judge_format: return 502;
    default: return 500;
  }
}

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, Errc code, const std::string& detail) {
  send_json(res, {{"error", to_string(code)}, {"detail", detail}}, http_status(code));
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

/// Turns exceptions into JSON errors.
Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.detail());
    } catch (const json::exception& e) {
      send_error(res, Errc::format, e.what());
    } catch (const std::exception& e) {
      send_error(res, Errc::io, e.what());
    }
  };
}

json body_of(const httplib::Request& req) {
  json j;
  try {
    j = json::parse(req.body);
  } catch (const json::exception&) {
    throw Error(Errc::format, "request body is not JSON");
  }
  if (!j.is_object()) throw Error(Errc::format, "request body must be a JSON object");
  return j;
}

std::string required_string(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
    throw Error(Errc::argument, fmt::format("\"{}\" is required", key));
  }
  return j[key].get<std::string>();
}

}  // namespace

ApiServer::ApiServer(Workspace& workspace) : workspace_(workspace), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::install_routes() {
  httplib::Server& s = *server_;
  Workspace& ws = workspace_;

  s.Get("/api/health", guarded([&ws](const httplib::Request&, httplib::Response& res) {
          send_json(res, {{"status", "ok"},
                          {"sites", ws.catalog().size()},
                          {"scenes", ws.scenes().list().size()},
                          {"captions", ws.captions().size()},
                          {"chunks", ws.index().size()}});
        }));

  s.Get("/api/sites", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
          catalog::SiteFilter filter;
          if (req.has_param("country")) filter.country = req.get_param_value("country");
          if (req.has_param("commodity")) filter.commodity = req.get_param_value("commodity");
          std::set<std::string> with_caption;
          for (const auto& c : ws.captions().with_status(captioner::CaptionStatus::accepted)) with_caption.insert(c.site_id);
          json out = json::array();
          for (const auto& site : ws.catalog().list_sites(filter)) {
            json j = catalog::to_json(site);
            j["has_accepted_caption"] = with_caption.count(site.site_id) > 0;
            out.push_back(std::move(j));
          }
          send_json(res, out);
        }));

  s.Get(R"(/api/sites/([a-z0-9-]{1,64}))", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
          std::string id = req.matches[1];
          json j = catalog::to_json(ws.catalog().site(id));
          auto d = ws.catalog().dossier(id);
          j["dossier"] = d ? catalog::to_json(*d) : json(nullptr);
          send_json(res, j);
        }));

  s.Get(R"(/api/sites/([a-z0-9-]{1,64})/scenes)", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
          std::string id = req.matches[1];
          ws.catalog().site(id);
          json out = json::array();
          for (const auto& scene : ws.scenes().list(id)) out.push_back(eo::to_json(scene));
          send_json(res, out);
        }));

  s.Get(R"(/api/sites/([a-z0-9-]{1,64})/captions)", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
          std::string id = req.matches[1];
          ws.catalog().site(id);
          json out = json::array();
          for (const auto& c : ws.captions().list(id)) {
            json j = captioner::to_json(c);
            auto score = ws.scores().find(c.caption_id);
            j["judge_score"] = score ? judge::to_json(*score) : json(nullptr);
            if (c.status == captioner::CaptionStatus::accepted) {
              j["pair_image"] = fmt::format("/api/scenes/{}/rgb.png", c.scene_id);
            }
            out.push_back(std::move(j));
          }
          send_json(res, out);
        }));

  s.Get(R"(/api/scenes/([^/]+)/rgb\.png)", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
          std::string png = ws.scene_rgb_png(std::string(req.matches[1]));
          res.set_content(png, "image/png");
        }));

  s.Get(R"(/api/scenes/([^/]+)/indices/([A-Za-z0-9_]+)\.png)",
        guarded([&ws](const httplib::Request& req, httplib::Response& res) {
          std::string png = ws.scene_index_png(std::string(req.matches[1]), std::string(req.matches[2]));
          res.set_content(png, "image/png");
        }));

  s.Post(R"(/api/scenes/([^/]+)/review)", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
           json body = body_of(req);
           auto scene = ws.review_scene(std::string(req.matches[1]), required_string(body, "verdict"),
                                        required_string(body, "reviewer"));
           send_json(res, eo::to_json(scene));
         }));

  s.Post(R"(/api/captions/([^/]+)/review)", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
           json body = body_of(req);
           auto c = ws.review_caption(std::string(req.matches[1]), required_string(body, "verdict"),
                                      required_string(body, "reviewer"));
           send_json(res, captioner::to_json(c));
         }));

  s.Post("/api/rag/query", guarded([&ws](const httplib::Request& req, httplib::Response& res) {
           json body = body_of(req);
           std::string question = required_string(body, "question");
           std::optional<std::size_t> k;
           if (body.contains("k") && !body["k"].is_null()) {
             if (!body["k"].is_number_integer() || body["k"].get<long long>() < 1) {
               throw Error(Errc::argument, "\"k\" must be a positive integer");
             }
             k = body["k"].get<std::size_t>();
           }
           std::optional<std::string> country;
           if (body.contains("country") && body["country"].is_string()) country = body["country"].get<std::string>();
           send_json(res, rag::to_json(ws.query(question, k, country)));
         }));

  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty() && req.path.rfind("/api/", 0) == 0) {
      send_error(res, Errc::not_found, fmt::format("no route for {} {}", req.method, req.path));
    }
  });

  const fs::path& ui = ws.config().ui_dir;
  if (!ui.empty() && fs::is_directory(ui)) s.set_mount_point("/", ui.string());
}

void ApiServer::bind(const std::string& address) {
  auto [host, port] = split_bind(address);
  if (!server_->bind_to_port(host, port)) throw Error(Errc::io, fmt::format("cannot bind {}", address));
}

int ApiServer::bind_any(const std::string& host) {
  int port = server_->bind_to_any_port(host);
  if (port <= 0) throw Error(Errc::io, fmt::format("cannot bind an ephemeral port on {}", host));
  return port;
}

void ApiServer::serve() { server_->listen_after_bind(); }

void ApiServer::stop() {
  if (server_) server_->stop();
}

bool ApiServer::running() const { return server_->is_running(); }

void ApiServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace nudgex::gateway
