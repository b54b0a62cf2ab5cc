#include "tdce/diffcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdce/common/error.hpp"
#include "tdce/common/random.hpp"

namespace tdce::diff {
namespace {

double eval_loss(ParamSet& params, const LossBuilder& loss) {
  Tape tape(params);
  const Var out = loss(tape);
  const double v = tape.value(out)[0];
  if (!std::isfinite(v)) throw RuntimeFailure("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport grad_check(ParamSet& params, const LossBuilder& loss, const GradCheckOptions& opt) {
  Gradients analytic;
  {
    Tape tape(params);
    const Var out = loss(tape);
    if (tape.value(out).size() != 1) throw ValidationError("grad_check: loss must be scalar");
    analytic = tape.backward(out);
  }
  for (const auto& g : analytic)
    for (double v : g.data())
      if (!std::isfinite(v)) throw RuntimeFailure("grad_check: non-finite analytic gradient");

  GradCheckReport report;
  report.passed = true;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p].value.storage();
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_elements_per_param > 0 && idx.size() > opt.max_elements_per_param) {
      Rng rng = make_rng(opt.seed, {p});
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_elements_per_param);
      std::sort(idx.begin(), idx.end());
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0, max_abs = 0.0;
    for (std::size_t k : idx) {
      const double orig = w[k];
      w[k] = orig + opt.step;
      const double up = eval_loss(params, loss);
      w[k] = orig - opt.step;
      const double down = eval_loss(params, loss);
      w[k] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic[p][k];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(a - numeric));
    }
    ParamCheck pc;
    pc.name = params[p].name;
    pc.checked = idx.size();
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), opt.norm_floor});
    pc.rel_error = std::sqrt(diff2) / denom;
    pc.max_abs_error = max_abs;
    pc.passed = pc.rel_error < opt.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, pc.rel_error);
    report.passed = report.passed && pc.passed;
    report.params.push_back(std::move(pc));
  }
  return report;
}

}  // namespace tdce::diff
