#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "tdce/study/service.hpp"

namespace tdce::study {

// {"admin": "<token>", "readers": {"<reader_id>": "<token>", ...}}
struct Tokens {
  std::string admin;
  std::map<std::string, std::string> readers;
};

Tokens read_tokens(const std::filesystem::path& path);

// Environment variable naming the token file for `serve`.
inline constexpr const char* kTokenFileEnv = "TDCE_STUDY_TOKENS";

struct ServerOptions {
  std::filesystem::path image_root;  // plan image paths resolve against this
  std::optional<Tokens> tokens;      // no auth when empty
};

// HTTP front end over a StudyService:
//   POST /studies                                   create from plan JSON (admin)
//   GET  /studies/{id}                              progress summary (admin)
//   GET  /studies/{id}/export                       ratings CSV (admin)
//   GET  /studies/{id}/readers/{rid}/sessions/{k}   session descriptor
//   POST .../sessions/{k}/open | pause | resume
//   POST .../sessions/{k}/cases/{cid}/rating        {binary_call, birads}
//   POST .../sessions/{k}/cases/{cid}/switch        {mode}
//   GET  .../sessions/{k}/cases/{cid}/images/{view}/{grayscale|tdce}   PNG bytes
// Errors are JSON {"error": message, ...detail}.
class StudyServer {
 public:
  StudyServer(StudyService& service, ServerOptions opt);
  ~StudyServer();

  // Binds; port 0 picks a free port. Returns the bound port or throws.
  int bind(const std::string& host, int port);
  // Serves until stop(). Call after bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tdce::study
