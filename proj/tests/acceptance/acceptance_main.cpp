// Acceptance run: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "tdce/checks/criteria.hpp"

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  tdce::checks::CheckOptions opt;
  std::vector<std::string> only;
  std::string report;
  app.add_option("--seed", opt.seed, "master seed");
  app.add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "run only these check ids");
  app.add_option("--report", report, "write results as JSON");
  CLI11_PARSE(app, argc, argv);

  nlohmann::json out = nlohmann::json::array();
  int failed = 0, ran = 0;
  for (const auto& c : tdce::checks::all_checks()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto r = tdce::checks::timed(c.id, [&] { return c.run(opt); });
    ++ran;
    if (!r.passed) ++failed;
    std::printf("%s %s: %s [%.1f s]\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.summary.c_str(), r.seconds);
    std::fflush(stdout);
    out.push_back({{"id", r.name}, {"passed", r.passed}, {"summary", r.summary}, {"seconds", r.seconds},
                   {"detail", r.detail}});
  }
  if (!report.empty()) std::ofstream(report) << out.dump(2) << '\n';
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 && ran > 0 ? 0 : 1;
}
