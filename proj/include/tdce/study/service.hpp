#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/study/state.hpp"
#include "tdce/study/store.hpp"

namespace tdce::study {

// Milliseconds since the Unix epoch.
using Clock = std::function<std::int64_t()>;
Clock system_clock();

struct ServiceOptions {
  std::filesystem::path store_dir;
  Clock clock = system_clock();
  // Operator override of the plan's washout (desk-scale demos).
  std::optional<int> washout_days;
  bool sync = true;
  // Called after an event is appended to the log and before the new state is
  // published or snapshotted. Tests throw from it to simulate a crash.
  std::function<void(const nlohmann::json&)> fault_hook;
};

enum class ImageKind { grayscale, tdce };

// Core of the reader-study service, independent of HTTP. Methods throw
// StudyError carrying the status code to answer with. Writes serialize on
// one mutex; reads atomically load the published immutable state.
class StudyService {
 public:
  // Replays an existing non-empty log in store_dir, otherwise starts empty.
  explicit StudyService(ServiceOptions opt);

  const std::vector<std::string>& recovery_warnings() const { return warnings_; }
  std::shared_ptr<const StoreState> state() const;

  nlohmann::json create_study(const nlohmann::json& plan);
  nlohmann::json study_summary(const std::string& study) const;

  nlohmann::json session_status(const std::string& study, const std::string& reader, int session) const;
  nlohmann::json open_session(const std::string& study, const std::string& reader, int session);
  nlohmann::json pause(const std::string& study, const std::string& reader, int session);
  nlohmann::json resume(const std::string& study, const std::string& reader, int session);
  // body: {binary_call, birads}. Returns the next case descriptor.
  nlohmann::json rate(const std::string& study, const std::string& reader, int session, const std::string& case_id,
                      const nlohmann::json& body);
  nlohmann::json switch_view(const std::string& study, const std::string& reader, int session,
                             const std::string& case_id, const std::string& mode);

  // Plan-relative image path, served only for the cursor case of an open
  // session and only for the kinds its condition shows.
  std::string image_path(const std::string& study, const std::string& reader, int session, const std::string& case_id,
                         const std::string& view, ImageKind kind) const;

  std::string export_csv(const std::string& study) const;

 private:
  std::shared_ptr<const StoreState> commit(nlohmann::json event);
  nlohmann::json descriptor(const StoreState& s, const std::string& study, const std::string& reader,
                            int session) const;
  int washout_days(const StudyState& st) const;

  ServiceOptions opt_;
  std::vector<std::string> warnings_;
  std::unique_ptr<EventLog> log_;
  std::mutex write_mu_;
  std::shared_ptr<const StoreState> state_;
};

// Keys a reader-facing response must never contain.
const std::vector<std::string>& reader_forbidden_keys();

}  // namespace tdce::study
