// selftest: the quick acceptance checks (gradient check and statistics oracles).

#include <cstdio>

#include "common.hpp"
#include "tdce/checks/criteria.hpp"

namespace tdce::cli {

void register_selftest_command(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    bool all = false;
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("selftest", "gradient check and statistics oracles");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, false);
  o->flag("--all", a->all, "also run the slow checks (training experiment, bootstrap coverage, GLMM)");
  out.push_back({sub, o, [a] {
                   RunRecord rec("selftest", a->g);
                   checks::CheckOptions opt;
                   if (a->g.seed) opt.seed = *a->g.seed;
                   opt.threads = a->g.threads;
                   nlohmann::json results = nlohmann::json::array();
                   int failed = 0, ran = 0;
                   for (const auto& c : checks::all_checks()) {
                     if (!a->all && !c.quick) continue;
                     const auto r = checks::timed(c.id, [&] { return c.run(opt); });
                     ++ran;
                     if (!r.passed) ++failed;
                     std::printf("%s %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.summary.c_str());
                     std::fflush(stdout);
                     results.push_back({{"id", r.name}, {"passed", r.passed}, {"summary", r.summary},
                                        {"detail", r.detail}});
                   }
                   const auto p = rec.out_dir() / "selftest.json";
                   write_json(p, {{"seed", opt.seed}, {"checks", results}});
                   rec.output(p);
                   rec.param("all", a->all);
                   rec.write();
                   std::printf("selftest: %d/%d passed\n", ran - failed, ran);
                   return failed == 0 ? 0 : 2;
                 }});
}

}  // namespace tdce::cli
