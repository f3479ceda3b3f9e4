#pragma once

#include "nudgex/error.hpp"
#include "nudgex/gateway/workspace.hpp"

#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace nudgex::gateway {

/// HTTP status for an error category.
int http_status(Errc code);

/// JSON API over a Workspace:
///   GET  /api/health
///   GET  /api/sites[?country=CC&commodity=X]
///   GET  /api/sites/{id}
///   GET  /api/sites/{id}/scenes
///   GET  /api/sites/{id}/captions
///   GET  /api/scenes/{id}/rgb.png
///   GET  /api/scenes/{id}/indices/{name}.png
///   POST /api/scenes/{id}/review     {verdict, reviewer}
///   POST /api/captions/{id}/review   {verdict, reviewer}
///   POST /api/rag/query              {question, k?, country?}
/// Errors are {error, detail} with a status from http_status().
class ApiServer {
 public:
  explicit ApiServer(Workspace& workspace);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds "host:port"; throws io error on failure.
  void bind(const std::string& address);
  /// Binds an ephemeral port and returns it.
  int bind_any(const std::string& host = "127.0.0.1");
  /// Blocks until stop().
  void serve();
  void stop();
  bool running() const;
  void wait_until_ready() const;

 private:
  void install_routes();

  Workspace& workspace_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace nudgex::gateway
