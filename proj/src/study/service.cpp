#include "tdce/study/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>

#include "tdce/common/error.hpp"

namespace tdce::study {

namespace fs = std::filesystem;
using nlohmann::json;

Clock system_clock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

const std::vector<std::string>& reader_forbidden_keys() {
  static const std::vector<std::string> keys{"label",  "labels", "reference", "reference_label", "prevalence",
                                             "score",  "scores", "ratings",   "truth",           "birads_reference"};
  return keys;
}

namespace {

bool safe_id(const std::string& s) {
  if (s.empty() || s.size() > 128) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
           c == '.';
  });
}

struct Located {
  const StudyState* study;
  const ReaderState* reader;
  const mrmc::ReaderAssignment* assignment;
  const SessionState* session;
  mrmc::Condition condition;
  const std::vector<std::string>* order;
};

Located locate(const StoreState& s, const std::string& study, const std::string& reader, int k) {
  const StudyState* st = s.find(study);
  if (!st) throw StudyError(404, "unknown study '" + study + "'");
  auto rit = st->readers.find(reader);
  if (rit == st->readers.end()) throw StudyError(404, "unknown reader '" + reader + "'");
  if (k < 1 || k > 3) throw StudyError(404, "session must be 1, 2 or 3");
  const auto& a = st->plan.reader(reader);
  const auto i = static_cast<std::size_t>(k - 1);
  return {st, &rit->second, &a, &rit->second.sessions[i], a.order[i], &a.case_order[i]};
}

bool shows(mrmc::Condition c, ImageKind kind) {
  switch (c) {
    case mrmc::Condition::grayscale_only: return kind == ImageKind::grayscale;
    case mrmc::Condition::tdce_only: return kind == ImageKind::tdce;
    case mrmc::Condition::side_by_side: return true;
  }
  return false;
}

bool parse_call(const json& v, bool& out) {
  if (v.is_boolean()) {
    out = v.get<bool>();
    return true;
  }
  if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) {
    out = v.get<int>() == 1;
    return true;
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "suspicious") out = true;
    else if (s == "non-suspicious") out = false;
    else return false;
    return true;
  }
  return false;
}

}  // namespace

StudyService::StudyService(ServiceOptions opt) : opt_(std::move(opt)), state_(std::make_shared<StoreState>()) {
  if (opt_.store_dir.empty()) throw ValidationError("study store directory is required");
  fs::create_directories(opt_.store_dir);
  const fs::path log_path = opt_.store_dir / kEventLogName;
  if (fs::exists(log_path) && fs::file_size(log_path) > 0) {
    LogContents contents = read_log(log_path);
    if (contents.events.empty()) {
      // Only a torn first record: nothing was ever acknowledged.
      warnings_.push_back("discarded torn first record of " + log_path.string());
      fs::resize_file(log_path, 0);
    } else {
      Recovery r = recover(opt_.store_dir, opt_.sync);
      warnings_ = std::move(r.warnings);
      state_ = std::make_shared<StoreState>(std::move(r.state));
    }
  }
  log_ = std::make_unique<EventLog>(log_path, opt_.sync);
}

std::shared_ptr<const StoreState> StudyService::state() const { return std::atomic_load(&state_); }

std::shared_ptr<const StoreState> StudyService::commit(json event) {
  auto cur = state();
  event["seq"] = cur->seq + 1;
  event["t"] = std::max(opt_.clock(), cur->last_t);
  auto next = std::make_shared<const StoreState>(study::apply(*cur, event));
  log_->append(event);
  if (opt_.fault_hook) opt_.fault_hook(event);
  std::atomic_store(&state_, next);
  write_snapshot(opt_.store_dir, *next);
  return next;
}

int StudyService::washout_days(const StudyState& st) const { return opt_.washout_days.value_or(st.plan.washout_days); }

json StudyService::create_study(const json& plan) {
  if (!plan.is_object()) throw StudyError(400, "plan must be a JSON object");
  mrmc::StudyPlan p;
  try {
    p = plan.get<mrmc::StudyPlan>();
    mrmc::validate(p);
  } catch (const std::exception& e) {
    throw StudyError(400, std::string("invalid plan: ") + e.what());
  }
  if (!safe_id(p.study_id)) throw StudyError(400, "study_id must be 1-128 characters of [A-Za-z0-9._-]");
  for (const auto& r : p.readers)
    if (!safe_id(r.reader_id)) throw StudyError(400, "reader_id '" + r.reader_id + "' has unsupported characters");
  for (const auto& c : p.cases) {
    if (!safe_id(c.case_id)) throw StudyError(400, "case_id '" + c.case_id + "' has unsupported characters");
    for (const auto& v : c.views)
      if (!safe_id(v.view)) throw StudyError(400, "view '" + v.view + "' has unsupported characters");
  }

  std::lock_guard lock(write_mu_);
  if (state()->find(p.study_id)) throw StudyError(409, "study '" + p.study_id + "' already exists");
  commit({{"type", "study_created"}, {"study", p.study_id}, {"plan", json(p)}});
  return {{"study_id", p.study_id}, {"readers", p.readers.size()}, {"cases", p.cases.size()}};
}

json StudyService::study_summary(const std::string& study) const {
  auto s = state();
  const StudyState* st = s->find(study);
  if (!st) throw StudyError(404, "unknown study '" + study + "'");
  json readers = json::array();
  for (const auto& a : st->plan.readers) {
    const auto& rs = st->readers.at(a.reader_id);
    json sessions = json::array();
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& ss = rs.sessions[k];
      sessions.push_back({{"session", k + 1},
                          {"condition", mrmc::to_string(a.order[k])},
                          {"status", to_string(ss.status)},
                          {"rated", ss.cursor},
                          {"case_count", a.case_order[k].size()},
                          {"completed_at", ss.completed_at ? json(iso_utc(*ss.completed_at)) : json(nullptr)}});
    }
    readers.push_back({{"reader_id", a.reader_id}, {"tier", mrmc::to_string(a.tier)}, {"sessions", sessions}});
  }
  return {{"study_id", study},
          {"washout_days", washout_days(*st)},
          {"created_at", iso_utc(st->created_at)},
          {"cases", st->plan.cases.size()},
          {"ratings", st->ratings.size()},
          {"readers", readers}};
}

json StudyService::descriptor(const StoreState& s, const std::string& study, const std::string& reader,
                              int k) const {
  const Located at = locate(s, study, reader, k);
  const SessionState& ss = *at.session;
  json d{{"study_id", study},
         {"reader_id", reader},
         {"session", k},
         {"condition", mrmc::to_string(at.condition)},
         {"status", to_string(ss.status)},
         {"case_count", at.order->size()},
         {"case_index", nullptr},
         {"case", nullptr}};
  if ((ss.status == SessionStatus::open || ss.status == SessionStatus::paused) && ss.cursor < at.order->size()) {
    const std::string& cid = (*at.order)[ss.cursor];
    const mrmc::StudyCase* c = at.study->plan.find_case(cid);
    const std::string base = "/studies/" + study + "/readers/" + reader + "/sessions/" + std::to_string(k) +
                             "/cases/" + cid + "/images/";
    json views = json::array();
    for (const auto& v : c->views) {
      json images = json::object();
      if (shows(at.condition, ImageKind::grayscale)) images["grayscale"] = base + v.view + "/grayscale";
      if (shows(at.condition, ImageKind::tdce)) images["tdce"] = base + v.view + "/tdce";
      views.push_back({{"view", v.view}, {"images", images}});
    }
    d["case_index"] = ss.cursor + 1;
    d["case"] = {{"case_id", cid}, {"views", views}};
  }
  if (ss.status == SessionStatus::complete && k < 3) {
    const std::int64_t unlock = *ss.completed_at + static_cast<std::int64_t>(washout_days(*at.study)) * kMsPerDay;
    d["next_session"] = {{"session", k + 1}, {"unlock_at", iso_utc(unlock)}, {"unlock_ms", unlock}};
  }
  return d;
}

json StudyService::session_status(const std::string& study, const std::string& reader, int session) const {
  return descriptor(*state(), study, reader, session);
}

json StudyService::open_session(const std::string& study, const std::string& reader, int k) {
  std::lock_guard lock(write_mu_);
  auto s = state();
  const Located at = locate(*s, study, reader, k);
  switch (at.session->status) {
    case SessionStatus::open: return descriptor(*s, study, reader, k);
    case SessionStatus::paused:
      s = commit({{"type", "resumed"}, {"study", study}, {"reader", reader}, {"session", k}});
      return descriptor(*s, study, reader, k);
    case SessionStatus::complete: throw StudyError(409, "session " + std::to_string(k) + " is already complete");
    case SessionStatus::locked: break;
  }
  if (k > 1) {
    const SessionState& prev = at.reader->sessions[static_cast<std::size_t>(k - 2)];
    if (prev.status != SessionStatus::complete)
      throw StudyError(423, "session " + std::to_string(k) + " is locked until session " + std::to_string(k - 1) +
                                " is complete",
                       {{"requires_session", k - 1}});
    const int days = washout_days(*at.study);
    const std::int64_t unlock = *prev.completed_at + static_cast<std::int64_t>(days) * kMsPerDay;
    if (opt_.clock() < unlock)
      throw StudyError(423, "session " + std::to_string(k) + " is locked by the washout period",
                       {{"unlock_at", iso_utc(unlock)}, {"unlock_ms", unlock}, {"washout_days", days}});
  }
  s = commit({{"type", "session_opened"}, {"study", study}, {"reader", reader}, {"session", k}});
  return descriptor(*s, study, reader, k);
}

json StudyService::pause(const std::string& study, const std::string& reader, int k) {
  std::lock_guard lock(write_mu_);
  const Located at = locate(*state(), study, reader, k);
  if (at.session->status != SessionStatus::open) throw StudyError(409, "session is not open");
  auto s = commit({{"type", "paused"}, {"study", study}, {"reader", reader}, {"session", k}});
  return descriptor(*s, study, reader, k);
}

json StudyService::resume(const std::string& study, const std::string& reader, int k) {
  std::lock_guard lock(write_mu_);
  const Located at = locate(*state(), study, reader, k);
  if (at.session->status != SessionStatus::paused) throw StudyError(409, "session is not paused");
  auto s = commit({{"type", "resumed"}, {"study", study}, {"reader", reader}, {"session", k}});
  return descriptor(*s, study, reader, k);
}

json StudyService::rate(const std::string& study, const std::string& reader, int k, const std::string& case_id,
                        const json& body) {
  if (!body.is_object()) throw StudyError(400, "rating body must be a JSON object");
  bool call = false;
  if (!body.contains("binary_call") || !parse_call(body["binary_call"], call))
    throw StudyError(400, "binary_call must be true/false, 0/1, or suspicious/non-suspicious");
  if (!body.contains("birads") || !body["birads"].is_number_integer())
    throw StudyError(400, "birads must be an integer 0-6");
  const int birads = body["birads"].get<int>();
  if (birads < 0 || birads > 6) throw StudyError(400, "birads must be an integer 0-6");

  std::lock_guard lock(write_mu_);
  const Located at = locate(*state(), study, reader, k);
  if (!at.study->plan.find_case(case_id)) throw StudyError(404, "unknown case '" + case_id + "'");
  for (const auto& r : at.study->ratings)
    if (r.reader_id == reader && r.case_id == case_id && r.condition == at.condition)
      throw StudyError(409, "case '" + case_id + "' was already rated in this session");
  if (at.session->status != SessionStatus::open)
    throw StudyError(409, "session is " + to_string(at.session->status) + ", not open");
  if ((*at.order)[at.session->cursor] != case_id)
    throw StudyError(409, "case '" + case_id + "' is not the current case", {{"current_case", (*at.order)[at.session->cursor]}});
  auto s = commit({{"type", "rated"},
                   {"study", study},
                   {"reader", reader},
                   {"session", k},
                   {"case", case_id},
                   {"binary_call", call},
                   {"birads", birads}});
  return descriptor(*s, study, reader, k);
}

json StudyService::switch_view(const std::string& study, const std::string& reader, int k, const std::string& case_id,
                               const std::string& mode) {
  std::lock_guard lock(write_mu_);
  locate(*state(), study, reader, k);
  auto s = commit(
      {{"type", "view_switched"}, {"study", study}, {"reader", reader}, {"session", k}, {"case", case_id}, {"mode", mode}});
  return {{"ok", true}, {"mode", mode}};
}

std::string StudyService::image_path(const std::string& study, const std::string& reader, int k,
                                     const std::string& case_id, const std::string& view, ImageKind kind) const {
  auto s = state();
  const Located at = locate(*s, study, reader, k);
  const mrmc::StudyCase* c = at.study->plan.find_case(case_id);
  if (!c) throw StudyError(404, "unknown case '" + case_id + "'");
  if (!shows(at.condition, kind)) throw StudyError(403, "image kind not shown under " + mrmc::to_string(at.condition));
  if (at.session->status != SessionStatus::open) throw StudyError(409, "session is not open");
  if ((*at.order)[at.session->cursor] != case_id) throw StudyError(409, "case '" + case_id + "' is not the current case");
  for (const auto& v : c->views)
    if (v.view == view) return kind == ImageKind::grayscale ? v.grayscale : v.tdce;
  throw StudyError(404, "case '" + case_id + "' has no view '" + view + "'");
}

std::string StudyService::export_csv(const std::string& study) const {
  auto s = state();
  const StudyState* st = s->find(study);
  if (!st) throw StudyError(404, "unknown study '" + study + "'");
  return mrmc::ratings_csv(st->ratings);
}

}  // namespace tdce::study
