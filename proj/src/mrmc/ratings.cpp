#include "tdce/mrmc/ratings.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "tdce/common/csv.hpp"
#include "tdce/common/error.hpp"

namespace tdce::mrmc {

using nlohmann::json;

double interval_seconds(const std::vector<Interval>& intervals) {
  std::vector<Interval> s = intervals;
  std::sort(s.begin(), s.end(), [](const Interval& a, const Interval& b) { return a.start_ms < b.start_ms; });
  std::int64_t total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].stop_ms <= s[i].start_ms)
      throw ValidationError("interval stop must exceed start (" + std::to_string(s[i].start_ms) + ", " +
                            std::to_string(s[i].stop_ms) + ")");
    if (i > 0 && s[i].start_ms < s[i - 1].stop_ms) throw ValidationError("overlapping timing intervals");
    total += s[i].stop_ms - s[i].start_ms;
  }
  return static_cast<double>(total) / 1000.0;
}

double rating_seconds(const ReaderRating& r) {
  if (r.total_seconds && r.intervals.empty()) return *r.total_seconds;
  return interval_seconds(r.intervals);
}

std::map<std::pair<std::string, Condition>, double> reading_time(const std::vector<ReaderRating>& ratings) {
  std::map<std::pair<std::string, Condition>, double> out;
  for (const auto& r : ratings) out[{r.reader_id, r.condition}] += rating_seconds(r);
  return out;
}

std::string ratings_csv(const std::vector<ReaderRating>& ratings) {
  std::string out = std::string(kRatingsHeader) + "\n";
  for (const auto& r : ratings) {
    // Millisecond resolution, printed without binary-fraction noise.
    const auto ms = static_cast<long long>(std::llround(rating_seconds(r) * 1000.0));
    std::ostringstream secs;
    secs << ms / 1000 << '.' << std::to_string(1000 + ms % 1000).substr(1);
    out += csv::join({r.reader_id, r.case_id, to_string(r.condition), r.suspicious ? "suspicious" : "non-suspicious",
                      std::to_string(r.birads), secs.str()}) +
           "\n";
  }
  return out;
}

std::vector<ReaderRating> parse_ratings_csv(std::istream& in, const std::string& source) {
  std::vector<std::string> f;
  if (!csv::read_record(in, f) || csv::join(f) != kRatingsHeader)
    throw ValidationError(source + ": header must be " + kRatingsHeader);
  std::vector<ReaderRating> out;
  std::size_t line = 1;
  while (csv::read_record(in, f)) {
    ++line;
    if (f.size() == 1 && f[0].empty()) continue;
    auto fail = [&](const std::string& field, const std::string& msg) {
      throw ValidationError(source + " line " + std::to_string(line) + (field.empty() ? "" : ", field '" + field + "'") +
                            ": " + msg);
    };
    if (f.size() != 6) fail("", "expected 6 fields");
    ReaderRating r;
    r.reader_id = f[0];
    r.case_id = f[1];
    if (r.reader_id.empty()) fail("reader_id", "empty");
    if (r.case_id.empty()) fail("case_id", "empty");
    try {
      r.condition = parse_condition(f[2]);
    } catch (const std::exception& e) {
      fail("condition", e.what());
    }
    if (f[3] == "suspicious" || f[3] == "1")
      r.suspicious = true;
    else if (f[3] == "non-suspicious" || f[3] == "0")
      r.suspicious = false;
    else
      fail("binary_call", "must be suspicious|non-suspicious");
    if (f[4].size() != 1 || f[4][0] < '0' || f[4][0] > '6') fail("birads", "must be an integer 0..6");
    r.birads = f[4][0] - '0';
    try {
      std::size_t used = 0;
      const double s = std::stod(f[5], &used);
      if (used != f[5].size() || !(s >= 0) || !std::isfinite(s)) throw std::invalid_argument("");
      r.total_seconds = s;
    } catch (const std::exception&) {
      fail("total_seconds", "must be a non-negative number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ReaderRating> read_ratings_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open ratings " + path.string());
  return parse_ratings_csv(in, path.string());
}

ReferenceLabels read_reference_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open reference " + path.string());
  std::vector<std::string> f;
  if (!csv::read_record(in, f) || f.size() != 2 || f[0] != "case_id" || f[1] != "label")
    throw ValidationError(path.string() + ": header must be case_id,label");
  ReferenceLabels ref;
  std::size_t line = 1;
  while (csv::read_record(in, f)) {
    ++line;
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 2) throw ValidationError(path.string() + " line " + std::to_string(line) + ": expected 2 fields");
    int v;
    if (f[1] == "1" || f[1] == "positive")
      v = 1;
    else if (f[1] == "0" || f[1] == "negative")
      v = 0;
    else if (f[1] == "excluded")
      continue;
    else
      throw ValidationError(path.string() + " line " + std::to_string(line) + ", field 'label': invalid '" + f[1] + "'");
    if (!ref.emplace(f[0], v).second)
      throw ValidationError(path.string() + " line " + std::to_string(line) + ": duplicate case '" + f[0] + "'");
  }
  return ref;
}

int call_of(const ReaderRating& r, CallSource source) {
  if (source == CallSource::binary) return r.suspicious ? 1 : 0;
  if (r.birads < 0 || r.birads > 6) throw ValidationError("BI-RADS out of range 0..6");
  if (r.birads == 0) return -1;
  return r.birads >= 4 ? 1 : 0;
}

namespace {

double ratio(std::size_t a, std::size_t b) { return b == 0 ? std::nan("") : static_cast<double>(a) / b; }

void finish(ReaderCell& c) {
  c.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  c.sensitivity = ratio(c.tp, c.tp + c.fn);
  c.specificity = ratio(c.tn, c.tn + c.fp);
}

// Mean of defined per-reader values; counts are summed.
ReaderCell mean_of(const std::vector<const ReaderCell*>& cells) {
  ReaderCell m;
  double acc = 0, sens = 0, spec = 0;
  int na = 0, ns = 0, np = 0;
  for (const auto* c : cells) {
    m.tp += c->tp;
    m.fp += c->fp;
    m.tn += c->tn;
    m.fn += c->fn;
    if (!std::isnan(c->accuracy)) acc += c->accuracy, ++na;
    if (!std::isnan(c->sensitivity)) sens += c->sensitivity, ++ns;
    if (!std::isnan(c->specificity)) spec += c->specificity, ++np;
  }
  m.accuracy = na ? acc / na : std::nan("");
  m.sensitivity = ns ? sens / ns : std::nan("");
  m.specificity = np ? spec / np : std::nan("");
  return m;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json cell_json(const ReaderCell& c) {
  return json{{"tp", c.tp},
              {"fp", c.fp},
              {"tn", c.tn},
              {"fn", c.fn},
              {"accuracy", num(c.accuracy)},
              {"sensitivity", num(c.sensitivity)},
              {"specificity", num(c.specificity)}};
}

}  // namespace

ReaderTable reader_table(const std::vector<ReaderRating>& ratings, const ReferenceLabels& reference,
                         const std::map<std::string, Tier>& tiers, CallSource source,
                         const std::vector<std::string>& excluded_cases) {
  const std::set<std::string> excluded(excluded_cases.begin(), excluded_cases.end());
  ReaderTable t;
  t.tiers = tiers;
  for (const auto& r : ratings) {
    auto ref = reference.find(r.case_id);
    if (ref == reference.end()) {
      if (excluded.contains(r.case_id)) {
        ++t.skipped_unreferenced;
        continue;
      }
      throw ValidationError("rating references unknown case '" + r.case_id + "'");
    }
    const int call = call_of(r, source);
    if (call < 0) {
      ++t.skipped_birads0;
      continue;
    }
    auto& c = t.per_reader[{r.reader_id, r.condition}];
    if (ref->second == 1)
      (call ? c.tp : c.fn)++;
    else
      (call ? c.fp : c.tn)++;
  }
  std::map<Condition, std::vector<const ReaderCell*>> by_cond;
  std::map<std::pair<Tier, Condition>, std::vector<const ReaderCell*>> by_tier;
  for (auto& [key, c] : t.per_reader) {
    finish(c);
    by_cond[key.second].push_back(&c);
    auto tier = tiers.find(key.first);
    if (tier != tiers.end()) by_tier[{tier->second, key.second}].push_back(&c);
  }
  for (const auto& [k, v] : by_cond) t.by_condition[k] = mean_of(v);
  for (const auto& [k, v] : by_tier) t.by_tier[k] = mean_of(v);
  return t;
}

json to_json(const ReaderTable& t) {
  json readers = json::array();
  for (const auto& [k, c] : t.per_reader) {
    json j = cell_json(c);
    j["reader_id"] = k.first;
    j["condition"] = to_string(k.second);
    auto tier = t.tiers.find(k.first);
    if (tier != t.tiers.end()) j["tier"] = to_string(tier->second);
    readers.push_back(j);
  }
  json conds = json::array();
  for (const auto& [k, c] : t.by_condition) {
    json j = cell_json(c);
    j["condition"] = to_string(k);
    conds.push_back(j);
  }
  json tiers = json::array();
  for (const auto& [k, c] : t.by_tier) {
    json j = cell_json(c);
    j["tier"] = to_string(k.first);
    j["condition"] = to_string(k.second);
    tiers.push_back(j);
  }
  return json{{"per_reader", readers},
              {"by_condition", conds},
              {"by_tier", tiers},
              {"aggregation", "mean of per-reader values; counts summed"},
              {"skipped_unreferenced", t.skipped_unreferenced},
              {"skipped_birads0", t.skipped_birads0}};
}

}  // namespace tdce::mrmc
