#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdce/mrmc/plan.hpp"

namespace tdce::mrmc {

struct Interval {
  std::int64_t start_ms = 0;
  std::int64_t stop_ms = 0;
};

struct ReaderRating {
  std::string reader_id;
  std::string case_id;
  Condition condition = Condition::grayscale_only;
  bool suspicious = false;  // binary triage call
  int birads = 1;
  std::vector<Interval> intervals;
  std::optional<double> total_seconds;  // set when read from CSV
};

// Throws ValidationError on stop <= start or overlapping intervals.
double interval_seconds(const std::vector<Interval>& intervals);
double rating_seconds(const ReaderRating& r);

// Total seconds per (reader, condition).
std::map<std::pair<std::string, Condition>, double> reading_time(const std::vector<ReaderRating>& ratings);

// CSV header: reader_id,case_id,condition,binary_call,birads,total_seconds
inline constexpr const char* kRatingsHeader = "reader_id,case_id,condition,binary_call,birads,total_seconds";
std::string ratings_csv(const std::vector<ReaderRating>& ratings);
std::vector<ReaderRating> read_ratings_csv(const std::filesystem::path& path);
std::vector<ReaderRating> parse_ratings_csv(std::istream& in, const std::string& source = "ratings");

// Reference standard per case: 1 suspicious, 0 non-suspicious. Cases whose
// reference is BI-RADS 0 are left out of the map.
using ReferenceLabels = std::map<std::string, int>;

// CSV case_id,label (label: 0/1 or negative/positive; "excluded" rows skipped).
ReferenceLabels read_reference_csv(const std::filesystem::path& path);

enum class CallSource { binary, birads };

struct ReaderCell {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, sensitivity = 0.0, specificity = 0.0;
};

struct ReaderTable {
  // (reader, condition) -> cell
  std::map<std::pair<std::string, Condition>, ReaderCell> per_reader;
  std::map<std::string, Tier> tiers;
  // Means of the per-reader values.
  std::map<Condition, ReaderCell> by_condition;
  std::map<std::pair<Tier, Condition>, ReaderCell> by_tier;
  std::size_t skipped_unreferenced = 0;  // ratings of excluded-reference cases
  std::size_t skipped_birads0 = 0;       // BI-RADS 0 calls under CallSource::birads
};

// Ratings of cases absent from `reference` throw unless listed in
// `excluded_cases`.
ReaderTable reader_table(const std::vector<ReaderRating>& ratings, const ReferenceLabels& reference,
                         const std::map<std::string, Tier>& tiers, CallSource source = CallSource::binary,
                         const std::vector<std::string>& excluded_cases = {});

int call_of(const ReaderRating& r, CallSource source);  // 1, 0, or -1 for BI-RADS 0

nlohmann::json to_json(const ReaderTable& t);

}  // namespace tdce::mrmc
