#include "tdce/study/http.hpp"

#include <httplib.h>

#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "tdce/common/error.hpp"

namespace tdce::study {

namespace fs = std::filesystem;
using nlohmann::json;

Tokens read_tokens(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read token file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ValidationError(path.string() + ": token file must be a JSON object");
  Tokens t;
  if (!j.contains("admin") || !j["admin"].is_string() || j["admin"].get<std::string>().empty())
    throw ValidationError(path.string() + ": field 'admin' must be a non-empty string");
  t.admin = j["admin"].get<std::string>();
  if (j.contains("readers")) {
    if (!j["readers"].is_object()) throw ValidationError(path.string() + ": field 'readers' must be an object");
    for (const auto& [rid, tok] : j["readers"].items()) {
      if (!tok.is_string() || tok.get<std::string>().empty())
        throw ValidationError(path.string() + ": token for reader '" + rid + "' must be a non-empty string");
      t.readers[rid] = tok.get<std::string>();
    }
  }
  return t;
}

namespace {

bool same_token(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  const std::string prefix = "Bearer ";
  return h.rfind(prefix, 0) == 0 ? h.substr(prefix.size()) : std::string();
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg, const json& detail = json::object()) {
  json body = detail.is_object() ? detail : json::object();
  body["error"] = msg;
  send_json(res, status, body);
}

int session_of(const std::string& s) {
  if (s.size() != 1 || s[0] < '1' || s[0] > '3') throw StudyError(404, "session must be 1, 2 or 3");
  return s[0] - '0';
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw StudyError(400, "request body is not valid JSON");
  return j;
}

}  // namespace

struct StudyServer::Impl {
  StudyService& service;
  ServerOptions opt;
  httplib::Server server;
  std::mutex lifecycle;
  bool started = false;
  bool stop_requested = false;

  Impl(StudyService& s, ServerOptions o) : service(s), opt(std::move(o)) {}

  void check_admin(const httplib::Request& req) const {
    if (opt.tokens && !same_token(bearer(req), opt.tokens->admin)) throw StudyError(401, "admin token required");
  }

  void check_reader(const httplib::Request& req, const std::string& rid) const {
    if (!opt.tokens) return;
    auto it = opt.tokens->readers.find(rid);
    if (it == opt.tokens->readers.end() || !same_token(bearer(req), it->second))
      throw StudyError(401, "reader token required");
  }

  // Wraps a handler so service errors become JSON responses.
  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const StudyError& e) {
        send_error(res, e.status(), e.what(), e.detail());
      } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
      } catch (const std::exception& e) {
        std::cerr << "study service: " << req.method << ' ' << req.path << ": " << e.what() << '\n';
        send_error(res, 500, e.what());
      }
    };
  }

  void routes() {
    const std::string S = "/studies/([^/]+)";
    const std::string R = S + "/readers/([^/]+)/sessions/([^/]+)";
    const std::string C = R + "/cases/([^/]+)";

    server.Post("/studies", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  check_admin(req);
                  send_json(res, 201, service.create_study(body_json(req)));
                }));
    server.Get(S, guarded([this](const httplib::Request& req, httplib::Response& res) {
                 check_admin(req);
                 send_json(res, 200, service.study_summary(req.matches[1]));
               }));
    server.Get(S + "/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 check_admin(req);
                 res.set_content(service.export_csv(req.matches[1]), "text/csv");
               }));
    server.Get(R, guarded([this](const httplib::Request& req, httplib::Response& res) {
                 check_reader(req, req.matches[2]);
                 send_json(res, 200, service.session_status(req.matches[1], req.matches[2], session_of(req.matches[3])));
               }));
    server.Post(R + "/(open|pause|resume)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  check_reader(req, req.matches[2]);
                  const std::string study = req.matches[1], reader = req.matches[2], action = req.matches[4];
                  const int k = session_of(req.matches[3]);
                  json out = action == "open"    ? service.open_session(study, reader, k)
                             : action == "pause" ? service.pause(study, reader, k)
                                                 : service.resume(study, reader, k);
                  send_json(res, 200, out);
                }));
    server.Post(C + "/rating", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  check_reader(req, req.matches[2]);
                  send_json(res, 200,
                            service.rate(req.matches[1], req.matches[2], session_of(req.matches[3]), req.matches[4],
                                         body_json(req)));
                }));
    server.Post(C + "/switch", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  check_reader(req, req.matches[2]);
                  const json body = body_json(req);
                  if (!body.contains("mode") || !body["mode"].is_string()) throw StudyError(400, "mode is required");
                  send_json(res, 200,
                            service.switch_view(req.matches[1], req.matches[2], session_of(req.matches[3]),
                                                req.matches[4], body["mode"].get<std::string>()));
                }));
    server.Get(C + "/images/([^/]+)/(grayscale|tdce)", guarded([this](const httplib::Request& req,
                                                                       httplib::Response& res) {
                 check_reader(req, req.matches[2]);
                 const ImageKind kind = req.matches[6] == "tdce" ? ImageKind::tdce : ImageKind::grayscale;
                 const fs::path rel = service.image_path(req.matches[1], req.matches[2], session_of(req.matches[3]),
                                                         req.matches[4], req.matches[5], kind);
                 const fs::path norm = rel.lexically_normal();
                 if (norm.is_absolute() || norm.empty() || *norm.begin() == "..")
                   throw StudyError(500, "plan image path escapes the image root");
                 std::ifstream in(opt.image_root / norm, std::ios::binary);
                 if (!in) throw StudyError(500, "image file missing: " + norm.string());
                 std::ostringstream bytes;
                 bytes << in.rdbuf();
                 res.set_content(bytes.str(), "image/png");
               }));
  }
};

StudyServer::StudyServer(StudyService& service, ServerOptions opt)
    : impl_(std::make_unique<Impl>(service, std::move(opt))) {
  impl_->routes();
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw RuntimeFailure("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw RuntimeFailure("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void StudyServer::run() {
  {
    std::lock_guard lock(impl_->lifecycle);
    if (impl_->stop_requested) return;
    impl_->started = true;
  }
  impl_->server.listen_after_bind();
}

// httplib ignores stop() until the accept loop is up, so a stop racing a
// fresh run() would otherwise be lost.
void StudyServer::stop() {
  if (!impl_) return;
  bool started = false;
  {
    std::lock_guard lock(impl_->lifecycle);
    impl_->stop_requested = true;
    started = impl_->started;
  }
  if (!started) return;
  impl_->server.wait_until_ready();
  impl_->server.stop();
}

}  // namespace tdce::study
