#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "tdce/mrmc/plan.hpp"

namespace tdce::testing {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("tdce_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

// Readers R1..Rn (one tier each in turn), cases C0..C{m-1} with CC and MLO views.
inline mrmc::StudyPlan make_plan(int readers, int cases, std::uint64_t seed = 1, int washout_days = 28) {
  std::vector<mrmc::Reader> rs;
  for (int i = 0; i < readers; ++i) rs.push_back({"R" + std::to_string(i + 1), static_cast<mrmc::Tier>(i % 3)});
  std::vector<mrmc::StudyCase> cs;
  for (int i = 0; i < cases; ++i) {
    const std::string id = "C" + std::to_string(i);
    cs.push_back({id, {{"CC", id + "_CC_gray.png", id + "_CC_tdce.png"},
                       {"MLO", id + "_MLO_gray.png", id + "_MLO_tdce.png"}}});
  }
  auto p = mrmc::build_plan(rs, cs, seed, washout_days);
  p.study_id = "S";
  return p;
}

// Every key of a JSON document, at any depth.
inline void collect_keys(const nlohmann::json& j, std::vector<std::string>& out) {
  if (j.is_object())
    for (auto it = j.begin(); it != j.end(); ++it) {
      out.push_back(it.key());
      collect_keys(it.value(), out);
    }
  else if (j.is_array())
    for (const auto& v : j) collect_keys(v, out);
}

}  // namespace tdce::testing
