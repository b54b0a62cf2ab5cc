#include "tdce/study/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tdce/common/error.hpp"

namespace tdce::study {

namespace fs = std::filesystem;
using nlohmann::json;

EventLog::EventLog(const fs::path& path, bool sync) : sync_(sync), path_(path) {
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw RuntimeFailure("cannot open event log " + path.string() + ": " + std::strerror(errno));
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const json& event) {
  const std::string line = event.dump() + "\n";
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw RuntimeFailure("event log write failed: " + std::string(std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
  if (sync_ && ::fsync(fd_) != 0) throw RuntimeFailure("event log fsync failed: " + std::string(std::strerror(errno)));
}

LogContents read_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read event log " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();

  LogContents out;
  std::size_t pos = 0, line_no = 0;
  while (pos < data.size()) {
    ++line_no;
    const std::size_t nl = data.find('\n', pos);
    if (nl == std::string::npos) {
      // Unterminated: the write never completed, so it was never acknowledged.
      out.torn_tail = true;
      break;
    }
    const std::string_view line(data.data() + pos, nl - pos);
    json ev = json::parse(line, nullptr, false);
    if (ev.is_discarded() || !ev.is_object()) {
      if (nl + 1 == data.size()) {
        out.torn_tail = true;
        break;
      }
      throw RuntimeFailure(path.string() + " line " + std::to_string(line_no) + ": corrupt event record");
    }
    out.events.push_back(std::move(ev));
    pos = nl + 1;
    out.good_bytes = pos;
  }
  return out;
}

StoreState replay(const std::vector<json>& events) {
  StoreState s;
  for (const auto& e : events) s = study::apply(s, e);
  return s;
}

void write_snapshot(const fs::path& dir, const StoreState& s) {
  const fs::path tmp = dir / (std::string(kSnapshotName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << to_json(s).dump() << '\n';
    out.flush();
    if (!out) throw RuntimeFailure("cannot write snapshot " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, dir / kSnapshotName, ec);
  if (ec) throw RuntimeFailure("cannot replace snapshot: " + ec.message());
}

std::optional<json> read_snapshot(const fs::path& dir) {
  std::ifstream in(dir / kSnapshotName, std::ios::binary);
  if (!in) return std::nullopt;
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

Recovery recover(const fs::path& dir, bool sync) {
  const fs::path log_path = dir / kEventLogName;
  if (!fs::exists(log_path)) throw StudyError(500, "no event log at " + log_path.string());
  LogContents log = read_log(log_path);
  Recovery r;
  if (log.torn_tail) {
    const auto size = fs::file_size(log_path);
    r.warnings.push_back("truncated torn final record of " + log_path.string() + " (" +
                         std::to_string(size - log.good_bytes) + " bytes)");
    fs::resize_file(log_path, log.good_bytes);
  }
  if (log.events.empty()) throw StudyError(500, "event log " + log_path.string() + " is empty");

  r.state = replay(log.events);
  if (auto snap = read_snapshot(dir)) {
    const json& on_disk = snap.value();
    r.snapshot_was_current = on_disk == to_json(r.state);
  }

  EventLog writer(log_path, sync);
  for (const auto& [study_id, st] : r.state.studies) {
    for (const auto& [reader_id, rs] : st->readers) {
      for (std::size_t k = 0; k < rs.sessions.size(); ++k) {
        if (!rs.sessions[k].running_since) continue;
        json ev{{"seq", r.state.seq + 1}, {"t", r.state.last_t}, {"type", "paused"},   {"study", study_id},
                {"reader", reader_id},    {"session", k + 1},      {"reason", "recovery"}};
        r.appended.push_back(ev);
      }
    }
  }
  // Applied after the scan: apply() replaces the study pointers being iterated.
  for (auto& ev : r.appended) {
    ev["seq"] = r.state.seq + 1;
    r.state = study::apply(r.state, ev);
    writer.append(ev);
  }
  write_snapshot(dir, r.state);
  return r;
}

}  // namespace tdce::study
