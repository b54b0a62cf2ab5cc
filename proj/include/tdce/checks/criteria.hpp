#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace tdce::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string summary;  // one line, measured values against their limits
  nlohmann::json detail = nlohmann::json::object();
  double seconds = 0.0;
};

struct CheckOptions {
  std::uint64_t seed = 20240611;
  unsigned threads = 1;
};

// Each check is self-contained and deterministic in (seed, threads-independent).
CheckResult check_gradients(const CheckOptions& o);
CheckResult check_freezing(const CheckOptions& o);
CheckResult check_directionality(const CheckOptions& o);
CheckResult check_auc_oracle(const CheckOptions& o);
CheckResult check_youden_oracle(const CheckOptions& o);
CheckResult check_delong(const CheckOptions& o);
CheckResult check_bootstrap(const CheckOptions& o);
CheckResult check_mcnemar(const CheckOptions& o);
CheckResult check_kappa(const CheckOptions& o);
CheckResult check_glmm(const CheckOptions& o);
CheckResult check_otsu(const CheckOptions& o);
CheckResult check_split(const CheckOptions& o);
CheckResult check_breast_aggregation(const CheckOptions& o);
CheckResult check_study_service(const CheckOptions& o);

struct NamedCheck {
  std::string id;
  std::function<CheckResult(const CheckOptions&)> run;
  bool quick;  // part of `selftest`
};

// In reporting order.
const std::vector<NamedCheck>& all_checks();

// Runs fn, filling name/seconds and turning exceptions into failures.
CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn);

}  // namespace tdce::checks
