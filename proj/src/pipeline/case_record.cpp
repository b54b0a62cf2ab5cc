#include "tdce/pipeline/case_record.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "tdce/common/error.hpp"

namespace tdce::pipeline {

using nlohmann::json;

Birads Birads::parse(const std::string& text) {
  if (text.empty() || text.size() > 2 || text[0] < '0' || text[0] > '9')
    throw ValidationError("invalid BI-RADS '" + text + "'");
  Birads b;
  b.category = text[0] - '0';
  if (text.size() == 2) {
    const char sub = static_cast<char>(std::toupper(static_cast<unsigned char>(text[1])));
    if (b.category != 4 || (sub != 'A' && sub != 'B' && sub != 'C'))
      throw ValidationError("invalid BI-RADS subcategory '" + text + "' (only 4A/4B/4C)");
    b.subcategory = sub;
  }
  if (b.category > 6) throw ValidationError("BI-RADS category out of range 0..6: " + text);
  return b;
}

std::string Birads::to_string() const {
  std::string s = std::to_string(category);
  if (subcategory) s += *subcategory;
  return s;
}

bool CaseRecord::has_finding(Finding f) const {
  return std::find(findings.begin(), findings.end(), f) != findings.end();
}

std::string to_string(Laterality l) { return l == Laterality::L ? "L" : "R"; }
std::string to_string(View v) { return v == View::CC ? "CC" : "MLO"; }

std::string to_string(Density d) {
  switch (d) {
    case Density::A:
      return "A";
    case Density::B:
      return "B";
    case Density::C:
      return "C";
    case Density::D:
      return "D";
    case Density::NR:
      return "NR";
  }
  return "NR";
}

std::string to_string(Finding f) {
  switch (f) {
    case Finding::mass:
      return "mass";
    case Finding::calcification:
      return "calcification";
    case Finding::asymmetry:
      return "asymmetry";
    case Finding::distortion:
      return "distortion";
    case Finding::none:
      return "none";
  }
  return "none";
}

std::string to_string(TriageLabel t) {
  switch (t) {
    case TriageLabel::negative:
      return "negative";
    case TriageLabel::positive:
      return "positive";
    case TriageLabel::excluded:
      return "excluded";
  }
  return "excluded";
}

std::string to_string(DensityGroup g) {
  switch (g) {
    case DensityGroup::non_dense:
      return "non-dense";
    case DensityGroup::dense:
      return "dense";
    case DensityGroup::NR:
      return "NR";
  }
  return "NR";
}

Laterality parse_laterality(const std::string& s) {
  if (s == "L") return Laterality::L;
  if (s == "R") return Laterality::R;
  throw ValidationError("laterality must be L|R, got '" + s + "'");
}

View parse_view(const std::string& s) {
  if (s == "CC") return View::CC;
  if (s == "MLO") return View::MLO;
  throw ValidationError("view must be CC|MLO, got '" + s + "'");
}

Density parse_density(const std::string& s) {
  if (s == "A") return Density::A;
  if (s == "B") return Density::B;
  if (s == "C") return Density::C;
  if (s == "D") return Density::D;
  if (s == "NR" || s.empty()) return Density::NR;
  throw ValidationError("density must be A|B|C|D|NR, got '" + s + "'");
}

Finding parse_finding(const std::string& s) {
  if (s == "mass") return Finding::mass;
  if (s == "calcification") return Finding::calcification;
  if (s == "asymmetry") return Finding::asymmetry;
  if (s == "distortion") return Finding::distortion;
  if (s == "none") return Finding::none;
  throw ValidationError("unknown finding '" + s + "'");
}

TriageLabel parse_triage_label(const std::string& s) {
  if (s == "negative") return TriageLabel::negative;
  if (s == "positive") return TriageLabel::positive;
  if (s == "excluded") return TriageLabel::excluded;
  throw ValidationError("label must be negative|positive|excluded, got '" + s + "'");
}

TriageLabel map_birads_to_label(int category) {
  if (category < 0 || category > 6)
    throw ValidationError("BI-RADS category out of range 0..6: " + std::to_string(category));
  if (category == 0) return TriageLabel::excluded;
  return category <= 3 ? TriageLabel::negative : TriageLabel::positive;
}

TriageLabel map_birads_to_label(const Birads& b) { return map_birads_to_label(b.category); }

DensityGroup density_group(Density d) {
  switch (d) {
    case Density::A:
    case Density::B:
      return DensityGroup::non_dense;
    case Density::C:
    case Density::D:
      return DensityGroup::dense;
    case Density::NR:
      return DensityGroup::NR;
  }
  return DensityGroup::NR;
}

ManifestError::ManifestError(std::size_t line, std::string field, const std::string& message)
    : std::runtime_error("manifest line " + std::to_string(line) + (field.empty() ? "" : ", field '" + field + "'") +
                         ": " + message),
      line_(line),
      field_(std::move(field)) {}

namespace {

const std::set<std::string>& known_fields() {
  static const std::set<std::string> k{"patient_id", "study_id", "laterality", "view", "birads",
                                       "density",    "findings", "image_path"};
  return k;
}

template <typename Fn>
auto field(const json& j, const char* name, std::size_t line, Fn&& fn) {
  if (!j.contains(name)) throw ManifestError(line, name, "missing required field");
  try {
    return fn(j.at(name));
  } catch (const ManifestError&) {
    throw;
  } catch (const std::exception& e) {
    throw ManifestError(line, name, e.what());
  }
}

std::string as_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ValidationError("expected a string");
}

}  // namespace

CaseRecord record_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) throw ManifestError(line, "", "record must be a JSON object");
  CaseRecord r;
  r.patient_id = field(j, "patient_id", line, as_string);
  r.study_id = j.contains("study_id") ? field(j, "study_id", line, as_string) : std::string("0");
  r.laterality = field(j, "laterality", line, [](const json& v) { return parse_laterality(v.get<std::string>()); });
  r.view = field(j, "view", line, [](const json& v) { return parse_view(v.get<std::string>()); });
  r.birads = field(j, "birads", line, [](const json& v) {
    if (v.is_number_integer()) {
      const auto c = v.get<long long>();
      if (c < 0 || c > 6) throw ValidationError("BI-RADS category out of range 0..6: " + std::to_string(c));
      return Birads{static_cast<int>(c), std::nullopt};
    }
    return Birads::parse(v.get<std::string>());
  });
  if (j.contains("density"))
    r.density = field(j, "density", line, [](const json& v) {
      return v.is_null() ? Density::NR : parse_density(v.get<std::string>());
    });
  if (j.contains("findings")) {
    r.findings = field(j, "findings", line, [](const json& v) {
      std::vector<Finding> out;
      for (const auto& f : v) out.push_back(parse_finding(f.get<std::string>()));
      return out;
    });
  }
  std::sort(r.findings.begin(), r.findings.end());
  r.findings.erase(std::unique(r.findings.begin(), r.findings.end()), r.findings.end());
  if (r.findings.size() > 1) std::erase(r.findings, Finding::none);
  if (r.findings.empty()) r.findings.push_back(Finding::none);
  r.image_path = j.contains("image_path") ? field(j, "image_path", line, as_string) : std::string();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known_fields().contains(it.key())) r.extra[it.key()] = it.value();
  return r;
}

json record_to_json(const CaseRecord& r) {
  json j = r.extra.is_object() ? r.extra : json::object();
  j["patient_id"] = r.patient_id;
  j["study_id"] = r.study_id;
  j["laterality"] = to_string(r.laterality);
  j["view"] = to_string(r.view);
  j["birads"] = r.birads.subcategory ? json(r.birads.to_string()) : json(r.birads.category);
  j["density"] = to_string(r.density);
  json f = json::array();
  for (auto x : r.findings) f.push_back(to_string(x));
  j["findings"] = f;
  j["image_path"] = r.image_path;
  return j;
}

void validate_manifest(const Manifest& m) {
  std::set<std::tuple<std::string, std::string, Laterality, View>> seen;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& r = m[i];
    if (!seen.insert({r.patient_id, r.study_id, r.laterality, r.view}).second)
      throw ManifestError(i + 1, "view",
                          "duplicate (patient_id, study_id, laterality, view) = (" + r.patient_id + ", " +
                              r.study_id + ", " + to_string(r.laterality) + ", " + to_string(r.view) + ")");
  }
}

Manifest parse_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ManifestError(lineno, "", std::string("invalid JSON: ") + e.what());
    }
    m.push_back(record_from_json(j, lineno));
  }
  validate_manifest(m);
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write manifest " + path.string());
  for (const auto& r : m) out << record_to_json(r).dump() << '\n';
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

std::filesystem::path resolve_image(const CaseRecord& r, const std::filesystem::path& manifest_dir) {
  std::filesystem::path p(r.image_path);
  return p.is_absolute() ? p : manifest_dir / p;
}

}  // namespace tdce::pipeline
