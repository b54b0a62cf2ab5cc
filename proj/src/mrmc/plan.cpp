#include "tdce/mrmc/plan.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "tdce/common/error.hpp"
#include "tdce/common/random.hpp"

namespace tdce::mrmc {

using nlohmann::json;

std::string to_string(Tier t) {
  switch (t) {
    case Tier::junior:
      return "junior";
    case Tier::intermediate:
      return "intermediate";
    case Tier::senior:
      return "senior";
  }
  return "junior";
}

std::string to_string(Condition c) {
  switch (c) {
    case Condition::grayscale_only:
      return "grayscale-only";
    case Condition::tdce_only:
      return "tdce-only";
    case Condition::side_by_side:
      return "side-by-side";
  }
  return "grayscale-only";
}

Tier parse_tier(const std::string& s) {
  if (s == "junior") return Tier::junior;
  if (s == "intermediate") return Tier::intermediate;
  if (s == "senior") return Tier::senior;
  throw ValidationError("tier must be junior|intermediate|senior, got '" + s + "'");
}

Condition parse_condition(const std::string& s) {
  if (s == "grayscale-only") return Condition::grayscale_only;
  if (s == "tdce-only") return Condition::tdce_only;
  if (s == "side-by-side") return Condition::side_by_side;
  throw ValidationError("condition must be grayscale-only|tdce-only|side-by-side, got '" + s + "'");
}

const ReaderAssignment& StudyPlan::reader(const std::string& id) const {
  for (const auto& r : readers)
    if (r.reader_id == id) return r;
  throw ValidationError("unknown reader '" + id + "'");
}

const StudyCase* StudyPlan::find_case(const std::string& id) const {
  for (const auto& c : cases)
    if (c.case_id == id) return &c;
  return nullptr;
}

StudyPlan build_plan(const std::vector<Reader>& readers, const std::vector<StudyCase>& cases, std::uint64_t seed,
                     int washout_days) {
  // Rows are balanced only when the reader count is a multiple of 3; pilots
  // with fewer readers still get a valid plan.
  if (readers.empty()) throw ValidationError("plan needs at least one reader");
  if (cases.empty()) throw ValidationError("case list is empty");
  if (washout_days < 0) throw ValidationError("washout_days must be >= 0");
  std::set<std::string> ids;
  for (const auto& r : readers)
    if (!ids.insert(r.reader_id).second) throw ValidationError("duplicate reader id '" + r.reader_id + "'");
  ids.clear();
  for (const auto& c : cases)
    if (!ids.insert(c.case_id).second) throw ValidationError("duplicate case id '" + c.case_id + "'");

  std::vector<Reader> ordered = readers;
  std::stable_sort(ordered.begin(), ordered.end(), [](const Reader& a, const Reader& b) { return a.tier < b.tier; });

  StudyPlan p;
  p.cases = cases;
  p.washout_days = washout_days;
  p.seed = seed;
  for (std::size_t k = 0; k < ordered.size(); ++k) {
    ReaderAssignment a;
    a.reader_id = ordered[k].reader_id;
    a.tier = ordered[k].tier;
    a.latin_row = static_cast<int>(k % 3);
    a.order = kLatinSquare[static_cast<std::size_t>(a.latin_row)];
    for (std::size_t s = 0; s < 3; ++s) {
      auto& order = a.case_order[s];
      for (const auto& c : cases) order.push_back(c.case_id);
      auto rng = make_rng(seed, {k, s});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    }
    p.readers.push_back(std::move(a));
  }
  return p;
}

void validate(const StudyPlan& p) {
  if (p.readers.empty()) throw ValidationError("plan has no readers");
  if (p.cases.empty()) throw ValidationError("plan has no cases");
  std::multiset<std::string> case_set;
  for (const auto& c : p.cases) case_set.insert(c.case_id);
  if (std::set<std::string>(case_set.begin(), case_set.end()).size() != case_set.size())
    throw ValidationError("plan has duplicate case ids");
  std::set<std::string> readers;
  for (const auto& r : p.readers) {
    if (!readers.insert(r.reader_id).second) throw ValidationError("duplicate reader id '" + r.reader_id + "'");
    std::set<Condition> conds(r.order.begin(), r.order.end());
    if (conds.size() != 3) throw ValidationError("reader " + r.reader_id + ": order is not a permutation of the conditions");
    for (const auto& order : r.case_order)
      if (std::multiset<std::string>(order.begin(), order.end()) != case_set)
        throw ValidationError("reader " + r.reader_id + ": case order is not a permutation of the case list");
  }
}

void to_json(json& j, const StudyPlan& p) {
  json readers = json::array();
  for (const auto& r : p.readers) {
    json sessions = json::array();
    for (std::size_t s = 0; s < 3; ++s)
      sessions.push_back({{"session", s + 1}, {"condition", to_string(r.order[s])}, {"case_order", r.case_order[s]}});
    readers.push_back(
        {{"reader_id", r.reader_id}, {"tier", to_string(r.tier)}, {"latin_row", r.latin_row}, {"sessions", sessions}});
  }
  json cases = json::array();
  for (const auto& c : p.cases) {
    json views = json::array();
    for (const auto& v : c.views) views.push_back({{"view", v.view}, {"grayscale", v.grayscale}, {"tdce", v.tdce}});
    cases.push_back({{"case_id", c.case_id}, {"views", views}});
  }
  j = json{{"study_id", p.study_id}, {"washout_days", p.washout_days}, {"seed", p.seed},
           {"conditions", {"grayscale-only", "tdce-only", "side-by-side"}},
           {"readers", readers}, {"cases", cases}};
}

void from_json(const json& j, StudyPlan& p) {
  try {
    p = StudyPlan{};
    p.study_id = j.value("study_id", std::string("study"));
    p.washout_days = j.value("washout_days", 28);
    p.seed = j.value("seed", std::uint64_t{0});
    for (const auto& c : j.at("cases")) {
      StudyCase sc;
      sc.case_id = c.at("case_id").get<std::string>();
      if (c.contains("views"))
        for (const auto& v : c.at("views"))
          sc.views.push_back({v.value("view", std::string()), v.value("grayscale", std::string()),
                              v.value("tdce", std::string())});
      p.cases.push_back(std::move(sc));
    }
    for (const auto& r : j.at("readers")) {
      ReaderAssignment a;
      a.reader_id = r.at("reader_id").get<std::string>();
      a.tier = parse_tier(r.at("tier").get<std::string>());
      a.latin_row = r.value("latin_row", 0);
      const auto& sessions = r.at("sessions");
      if (sessions.size() != 3) throw ValidationError("reader " + a.reader_id + " must have 3 sessions");
      for (std::size_t s = 0; s < 3; ++s) {
        a.order[s] = parse_condition(sessions[s].at("condition").get<std::string>());
        a.case_order[s] = sessions[s].at("case_order").get<std::vector<std::string>>();
      }
      p.readers.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid plan JSON: ") + e.what());
  }
  validate(p);
}

StudyPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open plan " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return j.get<StudyPlan>();
}

void write_plan(const StudyPlan& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << json(p).dump(2) << '\n';
}

}  // namespace tdce::mrmc
