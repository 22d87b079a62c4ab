#pragma once

#include <functional>
#include <memory>
#include <string>

#include "reasonseg/session.h"

namespace reasonseg {

/// HTTP JSON front end of a SessionService.
///
///   POST /sessions                  multipart field "image" (or a raw
///                                   image/png body) -> {session_id, ...}
///   POST /sessions/{id}/turns       {"text": ...} -> turn result
///   GET  /sessions/{id}             history and turn results
///   GET  /sessions/{id}/masks/{n}   image/png
///   GET  /healthz
///   POST /admin/reload              reloads the configured checkpoint
///
/// Errors are {"error": {"code", "message"}} with 400, 404, 409, 413, 500
/// or 503.
class ApiServer {
 public:
  /// `reload` builds the replacement model for /admin/reload; without it the
  /// route answers 404.
  using Reloader = std::function<std::shared_ptr<const TurnModel>()>;

  ApiServer(SessionService& service, Reloader reload = {});
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds `host:port` (port 0 picks a free one) and returns the bound port.
  /// Throws IoError when binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace reasonseg
