#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tdce/diffcore/param_set.hpp"
#include "tdce/diffcore/tape.hpp"

namespace tdce::diff {

// Builds a scalar loss on a fresh tape. Must be a pure function of the
// parameter values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  // Larger steps straddle ReLU / max-pool kinks in a few elements; the
  // central-difference truncation error is still ~1e-8 relative at 1e-6.
  double step = 1e-6;
  double tolerance = 1e-4;
  // 0 checks every element; otherwise a seeded sample of this many
  // elements per parameter tensor.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
  // Norms below this are treated as zero when forming the relative error, so
  // dead units do not turn finite-difference round-off into a failure.
  double norm_floor = 1e-6;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  // ||analytic - numeric|| / max(||analytic||, ||numeric||, norm_floor) over checked elements.
  double rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Compares backward() with central finite differences for every parameter.
// Throws RuntimeFailure on non-finite losses or gradients.
GradCheckReport grad_check(ParamSet& params, const LossBuilder& loss, const GradCheckOptions& opt = {});

}  // namespace tdce::diff
