#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace tdce::pipeline {

enum class Laterality { L, R };
enum class View { CC, MLO };
enum class Density { A, B, C, D, NR };
enum class Finding { mass, calcification, asymmetry, distortion, none };
enum class TriageLabel { negative, positive, excluded };
enum class DensityGroup { non_dense, dense, NR };

// BI-RADS 0-6, optionally with a 4A/4B/4C subcategory.
struct Birads {
  int category = 1;
  std::optional<char> subcategory;

  static Birads parse(const std::string& text);  // "2", "4A", ...
  std::string to_string() const;
  friend bool operator==(const Birads&, const Birads&) = default;
};

struct CaseRecord {
  std::string patient_id;
  std::string study_id;
  Laterality laterality = Laterality::L;
  View view = View::CC;
  Birads birads;
  Density density = Density::NR;
  std::vector<Finding> findings;  // sorted, unique; {none} when empty in the file
  std::string image_path;
  nlohmann::json extra = nlohmann::json::object();  // unknown fields, preserved

  bool has_finding(Finding f) const;
};

std::string to_string(Laterality l);
std::string to_string(View v);
std::string to_string(Density d);
std::string to_string(Finding f);
std::string to_string(TriageLabel t);
std::string to_string(DensityGroup g);
Laterality parse_laterality(const std::string& s);
View parse_view(const std::string& s);
Density parse_density(const std::string& s);
Finding parse_finding(const std::string& s);
TriageLabel parse_triage_label(const std::string& s);

// BI-RADS 1-3 negative, 4-6 positive (subcategories normalise to 4),
// 0 excluded. Throws ValidationError outside 0..6.
TriageLabel map_birads_to_label(const Birads& b);
TriageLabel map_birads_to_label(int category);

DensityGroup density_group(Density d);

// Line/field-aware manifest error.
class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::size_t line, std::string field, const std::string& message);
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

using Manifest = std::vector<CaseRecord>;

CaseRecord record_from_json(const nlohmann::json& j, std::size_t line = 0);
nlohmann::json record_to_json(const CaseRecord& r);

// JSONL, one record per line; blank lines ignored. Enforces uniqueness of
// (patient_id, study_id, laterality, view).
Manifest read_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& in);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
void validate_manifest(const Manifest& m);

// Resolves a relative image_path against the manifest's directory.
std::filesystem::path resolve_image(const CaseRecord& r, const std::filesystem::path& manifest_dir);

}  // namespace tdce::pipeline
