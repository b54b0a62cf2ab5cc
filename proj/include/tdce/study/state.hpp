#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/mrmc/plan.hpp"
#include "tdce/mrmc/ratings.hpp"

namespace tdce::study {

// Carries the HTTP status the service answers with.
class StudyError : public std::runtime_error {
 public:
  StudyError(int status, const std::string& msg, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(msg), status_(status), detail_(std::move(detail)) {}
  int status() const noexcept { return status_; }
  const nlohmann::json& detail() const noexcept { return detail_; }

 private:
  int status_;
  nlohmann::json detail_;
};

enum class SessionStatus { locked, open, paused, complete };
std::string to_string(SessionStatus s);
SessionStatus parse_session_status(const std::string& s);

struct SessionState {
  SessionStatus status = SessionStatus::locked;
  std::size_t cursor = 0;  // index into the plan's case order for this session
  std::optional<std::int64_t> opened_at;
  std::optional<std::int64_t> completed_at;
  std::optional<std::int64_t> running_since;  // start of the interval being timed
  std::vector<mrmc::Interval> pending;         // closed intervals of the cursor case
};

struct ReaderState {
  std::array<SessionState, 3> sessions{};
};

struct StudyState {
  mrmc::StudyPlan plan;
  std::int64_t created_at = 0;
  std::map<std::string, ReaderState> readers;
  std::vector<mrmc::ReaderRating> ratings;  // submission order
  std::size_t view_switches = 0;
};

// Immutable once published; updates copy the top-level map and only the
// study they touch.
struct StoreState {
  std::uint64_t seq = 0;
  std::int64_t last_t = 0;
  std::map<std::string, std::shared_ptr<const StudyState>> studies;

  const StudyState* find(const std::string& study_id) const;
};

// Events are JSON objects {seq, t, type, study, ...}. Types:
//   study_created {plan}
//   session_opened {reader, session}
//   paused / resumed {reader, session, reason?}
//   rated {reader, session, case, binary_call, birads}
//   view_switched {reader, session, case, mode}
// Sessions are 1-based in events and URLs.
//
// apply() checks structural consistency (sequence, state machine, cursor)
// but not policy (washout, clock); those are checked once, before the event
// is written. Throws StudyError on an inconsistent event.
StoreState apply(const StoreState& s, const nlohmann::json& event);

nlohmann::json to_json(const StoreState& s);
nlohmann::json to_json(const StudyState& s);
nlohmann::json to_json(const SessionState& s);

std::string iso_utc(std::int64_t ms);

inline constexpr std::int64_t kMsPerDay = 86'400'000;

}  // namespace tdce::study
