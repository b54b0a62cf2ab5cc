#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace tdce::mrmc {

enum class Tier { junior, intermediate, senior };
enum class Condition { grayscale_only, tdce_only, side_by_side };

inline constexpr std::array<Condition, 3> kConditions{Condition::grayscale_only, Condition::tdce_only,
                                                      Condition::side_by_side};

// Condition orders, one per Latin-square row.
inline constexpr std::array<std::array<Condition, 3>, 3> kLatinSquare{{
    {Condition::grayscale_only, Condition::tdce_only, Condition::side_by_side},
    {Condition::tdce_only, Condition::side_by_side, Condition::grayscale_only},
    {Condition::side_by_side, Condition::grayscale_only, Condition::tdce_only},
}};

std::string to_string(Tier t);
std::string to_string(Condition c);
Tier parse_tier(const std::string& s);
Condition parse_condition(const std::string& s);

struct Reader {
  std::string reader_id;
  Tier tier = Tier::junior;
};

// Image references for one case (one breast: its CC and MLO views).
struct CaseView {
  std::string view;  // "CC" | "MLO"
  std::string grayscale;
  std::string tdce;
};

struct StudyCase {
  std::string case_id;
  std::vector<CaseView> views;
};

struct ReaderAssignment {
  std::string reader_id;
  Tier tier = Tier::junior;
  int latin_row = 0;
  std::array<Condition, 3> order{};
  std::array<std::vector<std::string>, 3> case_order;  // per session, a permutation of the case ids
};

struct StudyPlan {
  std::string study_id = "study";
  std::vector<ReaderAssignment> readers;
  std::vector<StudyCase> cases;
  int washout_days = 28;
  std::uint64_t seed = 0;

  const ReaderAssignment& reader(const std::string& id) const;
  const StudyCase* find_case(const std::string& id) const;
};

// Readers are stably grouped by tier (junior, intermediate, senior) and
// assigned Latin-square rows round-robin in that order. Case order for
// (reader k in that order, session s) is a shuffle seeded by
// derive_seed(seed, {k, s}).
StudyPlan build_plan(const std::vector<Reader>& readers, const std::vector<StudyCase>& cases, std::uint64_t seed,
                     int washout_days = 28);

void validate(const StudyPlan& p);

void to_json(nlohmann::json& j, const StudyPlan& p);
void from_json(const nlohmann::json& j, StudyPlan& p);

StudyPlan read_plan(const std::filesystem::path& path);
void write_plan(const StudyPlan& p, const std::filesystem::path& path);

}  // namespace tdce::mrmc
