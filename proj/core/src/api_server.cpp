#include "reasonseg/api_server.h"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "reasonseg/errors.h"

namespace reasonseg {
namespace {

using nlohmann::json;

constexpr std::size_t kMaxPayloadBytes = 64u << 20;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

// Maps the library's exception types onto HTTP statuses.
void send_exception(httplib::Response& res, std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const NotFound& e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const Conflict& e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const DecodeError& e) {
    send_error(res, 400, "undecodable", e.what());
  } catch (const InvalidInput& e) {
    send_error(res, 400, "invalid_input", e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "invalid_json", e.what());
  } catch (const Unavailable& e) {
    send_error(res, 503, "unavailable", e.what());
  } catch (const PipelineError& e) {
    send_error(res, 500, "generation_failed", e.what());
  } catch (const std::exception& e) {
    spdlog::error("unhandled error: {}", e.what());
    send_error(res, 500, "internal", e.what());
  } catch (...) {
    send_error(res, 500, "internal", "unknown error");
  }
}

}  // namespace

struct ApiServer::Impl {
  SessionService& service;
  Reloader reload;
  httplib::Server server;

  Impl(SessionService& s, Reloader r) : service(s), reload(std::move(r)) { routes(); }

  void routes() {
    const std::string origin = service.config().cors_origin;
    server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.set_payload_max_length(kMaxPayloadBytes);
    server.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) { send_exception(res, ep); });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 413) {
        send_error(res, 413, "too_large", "request body is too large");
      } else if (res.status == 404) {
        send_error(res, 404, "not_found", "no such route");
      }
    });
    server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });

    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}, {"checkpoint_id", service.checkpoint_id()}, {"sessions", service.size()}});
    });

    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      std::string body;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) {
          send_error(res, 400, "invalid_input", "multipart field 'image' is missing");
          return;
        }
        body = req.get_file_value("image").content;
      } else {
        body = req.body;
      }
      if (body.empty()) {
        send_error(res, 400, "invalid_input", "no image in request");
        return;
      }
      const auto bytes = std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size());
      const Session s = service.create_session(bytes);
      send_json(res, 201,
                {{"session_id", s.session_id},
                 {"width", s.width},
                 {"height", s.height},
                 {"checkpoint_id", s.checkpoint_id},
                 {"created_at", format_utc(s.created_at)}});
    });

    server.Post(R"(/sessions/([0-9a-f]+)/turns)", [this](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
        send_error(res, 400, "invalid_input", "body must be {\"text\": string}");
        return;
      }
      const std::string id = req.matches[1];
      const TurnResult r = service.post_turn(id, body["text"].get<std::string>());
      send_json(res, 200, turn_result_json(id, r, true));
    });

    server.Get(R"(/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, session_json(service.get_session(req.matches[1])));
    });

    server.Get(R"(/sessions/([0-9a-f]+)/masks/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const int turn = std::stoi(req.matches[2]);
      const Bytes png = mask_to_png(service.turn_mask(req.matches[1], turn));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });

    server.Post("/admin/reload", [this](const httplib::Request&, httplib::Response& res) {
      if (!reload) {
        send_error(res, 404, "not_found", "reloading is not configured");
        return;
      }
      service.swap_model(reload());
      send_json(res, 200, {{"checkpoint_id", service.checkpoint_id()}});
    });

    if (service.config().ui_dir && !server.set_mount_point("/ui", service.config().ui_dir->string())) {
      spdlog::warn("ui directory {} does not exist; /ui is disabled", service.config().ui_dir->string());
    }
  }
};

ApiServer::ApiServer(SessionService& service, Reloader reload)
    : impl_(std::make_unique<Impl>(service, std::move(reload))) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ApiServer::serve() {
  if (!impl_->server.listen_after_bind()) throw IoError("server stopped with an error");
}

void ApiServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace reasonseg
