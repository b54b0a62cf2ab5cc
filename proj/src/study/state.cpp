#include "tdce/study/state.hpp"

#include <ctime>

#include "tdce/common/error.hpp"

namespace tdce::study {

using nlohmann::json;

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::locked: return "locked";
    case SessionStatus::open: return "open";
    case SessionStatus::paused: return "paused";
    case SessionStatus::complete: return "complete";
  }
  return "?";
}

SessionStatus parse_session_status(const std::string& s) {
  if (s == "locked") return SessionStatus::locked;
  if (s == "open") return SessionStatus::open;
  if (s == "paused") return SessionStatus::paused;
  if (s == "complete") return SessionStatus::complete;
  throw ValidationError("unknown session status '" + s + "'");
}

const StudyState* StoreState::find(const std::string& study_id) const {
  auto it = studies.find(study_id);
  return it == studies.end() ? nullptr : it->second.get();
}

std::string iso_utc(std::int64_t ms) {
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

template <class T>
T field(const json& e, const char* name) {
  auto it = e.find(name);
  if (it == e.end()) throw StudyError(400, std::string("event missing field '") + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw StudyError(400, std::string("event field '") + name + "' has the wrong type");
  }
}

void close_interval(SessionState& ss, std::int64_t t) {
  if (ss.running_since && t > *ss.running_since) ss.pending.push_back({*ss.running_since, t});
  ss.running_since.reset();
}

}  // namespace

StoreState apply(const StoreState& s, const json& e) {
  const auto seq = field<std::uint64_t>(e, "seq");
  const auto t = field<std::int64_t>(e, "t");
  const auto type = field<std::string>(e, "type");
  const auto study_id = field<std::string>(e, "study");
  if (seq != s.seq + 1)
    throw StudyError(500, "event sequence gap: expected " + std::to_string(s.seq + 1) + ", got " + std::to_string(seq));
  if (t < s.last_t) throw StudyError(500, "event time goes backwards at seq " + std::to_string(seq));

  StoreState out = s;
  out.seq = seq;
  out.last_t = t;

  if (type == "study_created") {
    if (s.find(study_id)) throw StudyError(409, "study '" + study_id + "' already exists");
    auto st = std::make_shared<StudyState>();
    try {
      st->plan = field<json>(e, "plan").get<mrmc::StudyPlan>();
      mrmc::validate(st->plan);
    } catch (const ValidationError& err) {
      throw StudyError(400, std::string("invalid plan: ") + err.what());
    }
    if (st->plan.study_id != study_id) throw StudyError(400, "plan study_id does not match the event");
    if (st->plan.washout_days < 0) throw StudyError(400, "washout_days must be non-negative");
    st->created_at = t;
    for (const auto& r : st->plan.readers) st->readers[r.reader_id] = ReaderState{};
    out.studies[study_id] = std::move(st);
    return out;
  }

  const StudyState* cur = s.find(study_id);
  if (!cur) throw StudyError(404, "unknown study '" + study_id + "'");
  auto st = std::make_shared<StudyState>(*cur);
  const auto reader_id = field<std::string>(e, "reader");
  auto rit = st->readers.find(reader_id);
  if (rit == st->readers.end()) throw StudyError(404, "unknown reader '" + reader_id + "'");
  const int k = field<int>(e, "session");
  if (k < 1 || k > 3) throw StudyError(404, "session must be 1, 2 or 3");
  SessionState& ss = rit->second.sessions[static_cast<std::size_t>(k - 1)];
  const auto& assignment = st->plan.reader(reader_id);
  const auto& order = assignment.case_order[static_cast<std::size_t>(k - 1)];
  const std::string where = reader_id + " session " + std::to_string(k);

  if (type == "session_opened") {
    if (ss.status != SessionStatus::locked) throw StudyError(409, where + " was already opened");
    if (k > 1 && rit->second.sessions[static_cast<std::size_t>(k - 2)].status != SessionStatus::complete)
      throw StudyError(423, where + " is locked until session " + std::to_string(k - 1) + " is complete");
    ss.status = SessionStatus::open;
    ss.opened_at = t;
    ss.running_since = t;
  } else if (type == "paused") {
    if (ss.status != SessionStatus::open) throw StudyError(409, where + " is not open");
    close_interval(ss, t);
    ss.status = SessionStatus::paused;
  } else if (type == "resumed") {
    if (ss.status != SessionStatus::paused) throw StudyError(409, where + " is not paused");
    ss.status = SessionStatus::open;
    ss.running_since = t;
  } else if (type == "rated" || type == "view_switched") {
    if (ss.status != SessionStatus::open) throw StudyError(409, where + " is not open");
    const auto case_id = field<std::string>(e, "case");
    if (ss.cursor >= order.size() || order[ss.cursor] != case_id)
      throw StudyError(409, "case '" + case_id + "' is not the current case of " + where);
    const auto condition = assignment.order[static_cast<std::size_t>(k - 1)];
    if (type == "view_switched") {
      if (condition != mrmc::Condition::side_by_side)
        throw StudyError(409, "view switching is only available under side-by-side");
      const auto mode = field<std::string>(e, "mode");
      if (mode != "grayscale" && mode != "tdce" && mode != "split") throw StudyError(400, "unknown view mode '" + mode + "'");
      ++st->view_switches;
    } else {
      for (const auto& r : st->ratings)
        if (r.reader_id == reader_id && r.case_id == case_id && r.condition == condition)
          throw StudyError(409, "case '" + case_id + "' was already rated in " + where);
      const int birads = field<int>(e, "birads");
      if (birads < 0 || birads > 6) throw StudyError(400, "birads must be 0-6");
      close_interval(ss, t);
      mrmc::ReaderRating r;
      r.reader_id = reader_id;
      r.case_id = case_id;
      r.condition = condition;
      r.suspicious = field<bool>(e, "binary_call");
      r.birads = birads;
      r.intervals = std::move(ss.pending);
      ss.pending.clear();
      st->ratings.push_back(std::move(r));
      ++ss.cursor;
      if (ss.cursor == order.size()) {
        ss.status = SessionStatus::complete;
        ss.completed_at = t;
      } else {
        ss.running_since = t;
      }
    }
  } else {
    throw StudyError(400, "unknown event type '" + type + "'");
  }
  out.studies[study_id] = std::move(st);
  return out;
}

json to_json(const SessionState& s) {
  json j{{"status", to_string(s.status)}, {"cursor", s.cursor}};
  j["opened_at"] = s.opened_at ? json(*s.opened_at) : json(nullptr);
  j["completed_at"] = s.completed_at ? json(*s.completed_at) : json(nullptr);
  j["running_since"] = s.running_since ? json(*s.running_since) : json(nullptr);
  json pending = json::array();
  for (const auto& iv : s.pending) pending.push_back({iv.start_ms, iv.stop_ms});
  j["pending"] = pending;
  return j;
}

json to_json(const StudyState& s) {
  json readers = json::object();
  for (const auto& [id, r] : s.readers) {
    json sessions = json::array();
    for (const auto& ss : r.sessions) sessions.push_back(to_json(ss));
    readers[id] = sessions;
  }
  json ratings = json::array();
  for (const auto& r : s.ratings) {
    json iv = json::array();
    for (const auto& i : r.intervals) iv.push_back({i.start_ms, i.stop_ms});
    ratings.push_back({{"reader_id", r.reader_id},
                       {"case_id", r.case_id},
                       {"condition", mrmc::to_string(r.condition)},
                       {"binary_call", r.suspicious},
                       {"birads", r.birads},
                       {"intervals", iv}});
  }
  return {{"plan", json(s.plan)},
          {"created_at", s.created_at},
          {"readers", readers},
          {"ratings", ratings},
          {"view_switches", s.view_switches}};
}

json to_json(const StoreState& s) {
  json studies = json::object();
  for (const auto& [id, st] : s.studies) studies[id] = to_json(*st);
  return {{"seq", s.seq}, {"last_t", s.last_t}, {"studies", studies}};
}

}  // namespace tdce::study
