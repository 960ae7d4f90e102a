#include "nesy/server.hpp"

#include <httplib.h>

#include "nesy/error.hpp"

namespace nesy {

namespace {

using json = nlohmann::json;

class BadRequest : public Error {
 public:
  explicit BadRequest(const std::string& message) : Error("bad_request", message) {}
};

json body_of(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw BadRequest(std::string("request body is not JSON: ") + e.what());
  }
}

std::string string_field(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body[key].is_string())
    throw BadRequest(std::string("expected a string field '") + key + "'");
  return body[key].get<std::string>();
}

// Manifests may be posted bare or wrapped as {"manifest": {...}}.
json manifest_of(const json& body) {
  if (body.is_object() && body.contains("manifest")) return body["manifest"];
  return body;
}

std::uint64_t cycle_of(const std::string& s) {
  if (s.empty() || s.size() > 18 || s.find_first_not_of("0123456789") != std::string::npos)
    throw BadRequest("bad cycle id '" + s + "'");
  return std::stoull(s);
}

}  // namespace

ApiServer::ApiServer(Session& session) : session_(session), server_(std::make_unique<httplib::Server>()) { routes(); }
ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool ApiServer::run() { return server_->listen_after_bind(); }
void ApiServer::stop() {
  if (server_->is_running()) server_->stop();
}

void ApiServer::routes() {
  using Handler = std::function<json(const httplib::Request&, httplib::Response&)>;
  auto wrap = [this](Handler h) {
    return [this, h](const httplib::Request& req, httplib::Response& res) {
      json out;
      try {
        res.status = 200;
        out = h(req, res);
      } catch (const std::exception& e) {
        out = api_error(e);
        res.status = out["status"].get<int>();
      }
      const auto epoch = session_.epoch();
      if (out.is_object()) out["session_epoch"] = epoch;
      res.set_header("X-Session-Epoch", std::to_string(epoch));
      res.set_content(out.dump(), "application/json");
    };
  };
  auto& s = session_;
  auto& srv = *server_;

  srv.Get("/model/summary", wrap([&](auto&, auto&) { return s.summary(); }));
  srv.Post("/datasets/load", wrap([&](auto& req, auto&) { return s.load_dataset(string_field(body_of(req), "path")); }));
  srv.Post("/concepts", wrap([&](auto& req, auto&) {
             const json m = manifest_of(body_of(req));
             json r = to_json(s.add_concept(m));
             r["concept"] = m.value("concept", "");
             return r;
           }));
  srv.Post("/concepts/group", wrap([&](auto& req, auto&) {
             json reports = json::object();
             for (const auto& [name, r] : s.add_group(manifest_of(body_of(req)))) reports[name] = to_json(r);
             return json{{"reports", reports}};
           }));
  srv.Post("/query", wrap([&](auto& req, auto&) {
             const json body = body_of(req);
             const std::string text = string_field(body, "formula");
             if (body.contains("example")) return to_json(s.explain(text, string_field(body, "example")));
             return to_json(s.query(text));
           }));
  srv.Get("/kb", wrap([&](auto&, auto&) { return s.kb_json(); }));
  srv.Post("/kb/rules", wrap([&](auto& req, auto& res) {
             const std::string id = s.add_rule(string_field(body_of(req), "formula"));
             res.status = 201;
             const json kb = s.kb_json();
             for (const auto& r : kb["rules"])
               if (r["id"] == id) return json{{"id", id}, {"formula", r["formula"]}};
             return json{{"id", id}};
           }));
  srv.Delete(R"(/kb/rules/([^/]+))", wrap([&](auto& req, auto&) {
               s.remove_rule(req.matches[1]);
               return json{{"removed", req.matches[1].str()}};
             }));
  srv.Patch(R"(/kb/rules/([^/]+))", wrap([&](auto& req, auto&) {
              const json body = body_of(req);
              if (!body.contains("enabled") || !body["enabled"].is_boolean())
                throw BadRequest("expected a boolean field 'enabled'");
              s.set_rule_enabled(req.matches[1], body["enabled"].get<bool>());
              return json{{"id", req.matches[1].str()}, {"enabled", body["enabled"]}};
            }));
  srv.Get("/kb/sat", wrap([&](auto&, auto&) { return to_json(s.sat()); }));
  srv.Post("/train", wrap([&](auto& req, auto& res) {
             const std::string job = s.start_training(body_of(req));
             res.status = 202;
             return json{{"job", job}};
           }));
  srv.Get("/train/status", wrap([&](auto&, auto&) { return s.training_status(); }));
  srv.Post("/train/cancel", wrap([&](auto&, auto&) {
             s.cancel_training();
             return json{{"cancelling", s.training()}};
           }));
  srv.Get("/checkpoints", wrap([&](auto&, auto&) { return json{{"checkpoints", s.checkpoints()}}; }));
  srv.Post(R"(/checkpoints/([^/]+)/revert)", wrap([&](auto& req, auto&) {
             const SatReport r = s.revert(cycle_of(req.matches[1]));
             return json{{"cycle", r.cycle}, {"report", to_json(r)}};
           }));
  srv.Get("/semantics", wrap([&](auto&, auto&) { return to_json(s.semantics()); }));
  srv.Put("/semantics", wrap([&](auto& req, auto&) {
            s.set_semantics(semantics_from_json(body_of(req)));
            return to_json(s.semantics());
          }));
  srv.Get("/report", wrap([&](auto&, auto&) { return s.report(); }));
  srv.Post("/report/export", wrap([&](auto& req, auto&) {
             const std::string path = string_field(body_of(req), "path");
             s.export_report(path);
             return json{{"path", path}};
           }));
  srv.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    json out{{"status", res.status},
             {"code", res.status == 404 ? "not_found" : "bad_request"},
             {"message", res.status == 404 ? "no such endpoint" : "request rejected"},
             {"session_epoch", session_.epoch()}};
    res.set_content(out.dump(), "application/json");
  });
}

}  // namespace nesy
