#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/study/state.hpp"

namespace tdce::study {

// Store layout: <dir>/events.jsonl (append-only, one event per line) and
// <dir>/snapshot.json (to_json(StoreState), replaced by atomic rename).
inline constexpr const char* kEventLogName = "events.jsonl";
inline constexpr const char* kSnapshotName = "snapshot.json";

class EventLog {
 public:
  EventLog(const std::filesystem::path& path, bool sync);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  // Returns once the line is written (and fsync'd when sync is on).
  void append(const nlohmann::json& event);

 private:
  int fd_ = -1;
  bool sync_;
  std::filesystem::path path_;
};

struct LogContents {
  std::vector<nlohmann::json> events;
  std::uintmax_t good_bytes = 0;  // length of the intact prefix
  bool torn_tail = false;
};

// A final record that is unterminated or unparsable is reported as a torn
// tail; damage anywhere earlier throws RuntimeFailure.
LogContents read_log(const std::filesystem::path& path);

StoreState replay(const std::vector<nlohmann::json>& events);

void write_snapshot(const std::filesystem::path& dir, const StoreState& s);
std::optional<nlohmann::json> read_snapshot(const std::filesystem::path& dir);

struct Recovery {
  StoreState state;
  std::vector<std::string> warnings;
  std::vector<nlohmann::json> appended;  // pause events closing intervals left open
  bool snapshot_was_current = false;     // on-disk snapshot matched the replay
};

// Rebuilds the store from its event log. A torn final record is truncated
// away. Sessions that were being timed at the crash get a pause event at the
// last logged timestamp; a later resume starts a new interval. The snapshot
// is rewritten from the replay. Throws StudyError on a missing or empty log.
Recovery recover(const std::filesystem::path& dir, bool sync = true);

}  // namespace tdce::study
