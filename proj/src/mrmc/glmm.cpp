#include "tdce/mrmc/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "tdce/common/error.hpp"
#include "tdce/common/random.hpp"

namespace tdce::mrmc {

using nlohmann::json;

namespace {

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check(const GlmmData& d) {
  const std::size_t n = d.n();
  if (n == 0) throw ValidationError("GLMM: no observations");
  if (d.reader.size() != n || d.item.size() != n || d.x.size() != n * d.p)
    throw ValidationError("GLMM: inconsistent data lengths");
  if (d.p == 0) throw ValidationError("GLMM: empty fixed-effect design");
  for (std::size_t i = 0; i < n; ++i) {
    if (d.y[i] != 0 && d.y[i] != 1) throw ValidationError("GLMM: outcomes must be 0/1");
    if (d.reader[i] < 0 || static_cast<std::size_t>(d.reader[i]) >= d.n_readers ||
        d.item[i] < 0 || static_cast<std::size_t>(d.item[i]) >= d.n_cases)
      throw ValidationError("GLMM: random-effect index out of range");
  }
}

// Laplace approximation for fixed (beta, sigma_r, sigma_c). Keeps the mode of
// the spherical random effects u (b = Lambda u) for warm starts.
class Laplace {
 public:
  Laplace(const GlmmData& d, double tol) : d_(d), tol_(tol), eta0_(d.n()) {}

  // Returns the Laplace log-likelihood; u is the warm start on input and the
  // mode on output.
  double operator()(const std::vector<double>& beta, double sr, double sc, Eigen::VectorXd& u) {
    const std::size_t n = d_.n(), R = d_.n_readers, C = d_.n_cases;
    for (std::size_t i = 0; i < n; ++i) {
      double e = 0;
      for (std::size_t j = 0; j < d_.p; ++j) e += d_.x[i * d_.p + j] * beta[j];
      eta0_[i] = e;
    }
    if (u.size() != static_cast<Eigen::Index>(R + C)) u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(R + C));

    double f = objective(u, sr, sc);
    double logdet = 0.0;
    for (int it = 0; it < 100; ++it) {
      Eigen::VectorXd g;
      const Eigen::VectorXd delta = newton_step(u, sr, sc, g, logdet);
      // Step halving keeps the penalized log-likelihood increasing.
      double step = 1.0;
      Eigen::VectorXd cand;
      double fc = -INFINITY;
      for (int h = 0; h < 30; ++h, step /= 2) {
        cand = u + step * delta;
        fc = objective(cand, sr, sc);
        if (fc >= f) break;
      }
      if (!(fc >= f)) break;
      const double change = (cand - u).lpNorm<Eigen::Infinity>();
      u = cand;
      f = fc;
      if (change < tol_) break;
    }
    Eigen::VectorXd g;
    newton_step(u, sr, sc, g, logdet);
    return f - 0.5 * logdet;
  }

 private:
  // Sum of Bernoulli log-likelihoods minus |u|^2 / 2.
  double objective(const Eigen::VectorXd& u, double sr, double sc) const {
    const std::size_t R = d_.n_readers;
    double s = 0;
    for (std::size_t i = 0; i < d_.n(); ++i) {
      const double eta = eta0_[i] + sr * u[d_.reader[i]] + sc * u[static_cast<Eigen::Index>(R) + d_.item[i]];
      s += d_.y[i] * eta - log1pexp(eta);
    }
    return s - 0.5 * u.squaredNorm();
  }

  // Solves H delta = g with H = I + Lambda Z'WZ Lambda, using the diagonal
  // case block and a dense Schur complement on the reader block.
  Eigen::VectorXd newton_step(const Eigen::VectorXd& u, double sr, double sc, Eigen::VectorXd& g, double& logdet) {
    const std::size_t R = d_.n_readers, C = d_.n_cases;
    const auto Ri = static_cast<Eigen::Index>(R), Ci = static_cast<Eigen::Index>(C);
    Eigen::VectorXd A = Eigen::VectorXd::Ones(Ri), D = Eigen::VectorXd::Ones(Ci);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(Ri, Ci);
    g = -u;
    for (std::size_t i = 0; i < d_.n(); ++i) {
      const int r = d_.reader[i], c = d_.item[i];
      const double eta = eta0_[i] + sr * u[r] + sc * u[Ri + c];
      const double mu = inv_logit(eta);
      const double w = mu * (1.0 - mu);
      g[r] += sr * (d_.y[i] - mu);
      g[Ri + c] += sc * (d_.y[i] - mu);
      A[r] += sr * sr * w;
      D[c] += sc * sc * w;
      B(r, c) += sr * sc * w;
    }
    const Eigen::VectorXd Dinv = D.cwiseInverse();
    const Eigen::MatrixXd BD = B * Dinv.asDiagonal();
    Eigen::MatrixXd S = -BD * B.transpose();
    S.diagonal() += A;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw RuntimeFailure("GLMM: Laplace Hessian not positive definite");
    logdet = D.array().log().sum() + 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const Eigen::VectorXd gr = g.head(Ri), gc = g.tail(Ci);
    const Eigen::VectorXd dr = llt.solve(gr - BD * gc);
    Eigen::VectorXd delta(Ri + Ci);
    delta.head(Ri) = dr;
    delta.tail(Ci) = Dinv.cwiseProduct(gc - B.transpose() * dr);
    return delta;
  }

  const GlmmData& d_;
  double tol_;
  std::vector<double> eta0_;
};

// Plain logistic regression by Newton's method; starting values only.
std::vector<double> logistic_start(const GlmmData& d) {
  const auto p = static_cast<Eigen::Index>(d.p);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t i = 0; i < d.n(); ++i) {
      Eigen::Map<const Eigen::VectorXd> x(d.x.data() + i * d.p, p);
      const double mu = inv_logit(x.dot(beta));
      g += (d.y[i] - mu) * x;
      H += mu * (1 - mu) * x * x.transpose();
    }
    H.diagonal().array() += 1e-8;
    const Eigen::VectorXd step = H.ldlt().solve(g);
    beta += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-12 || beta.lpNorm<Eigen::Infinity>() > 30) break;
  }
  return {beta.data(), beta.data() + p};
}

}  // namespace

double glmm_laplace_loglik(const GlmmData& data, const std::vector<double>& beta, double sr, double sc) {
  check(data);
  if (beta.size() != data.p) throw ValidationError("GLMM: beta has wrong length");
  Laplace lap(data, 1e-12);
  Eigen::VectorXd u;
  return lap(beta, sr, sc, u);
}

GlmmFit glmm_fit(const GlmmData& data, const GlmmOptions& opt) {
  check(data);
  if (data.n_readers < 2) throw ValidationError("GLMM: need >= 2 readers");
  if (data.n_cases < 2) throw ValidationError("GLMM: need >= 2 cases");

  GlmmFit fit;
  fit.names = data.fixed_names;
  if (fit.names.size() != data.p) {
    fit.names.clear();
    for (std::size_t j = 0; j < data.p; ++j) fit.names.push_back("x" + std::to_string(j));
  }
  const std::size_t p = data.p, m = p + 2;
  const auto nan = std::nan("");
  fit.beta.assign(p, nan);
  fit.se.assign(p, nan);
  fit.z.assign(p, nan);
  fit.p.assign(p, nan);

  std::size_t ones = 0;
  for (int v : data.y) ones += static_cast<std::size_t>(v);
  if (ones == 0 || ones == data.n()) {
    fit.separation = true;
    fit.message = "all outcomes identical; estimates diverge";
    return fit;
  }

  Laplace lap(data, opt.inner_tolerance);
  Eigen::VectorXd u_cur;
  // f = negative Laplace log-likelihood in theta = (beta, log s_r, log s_c).
  auto f = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd u = u_cur;
    std::vector<double> beta(th.data(), th.data() + p);
    return -lap(beta, std::exp(th[static_cast<Eigen::Index>(p)]), std::exp(th[static_cast<Eigen::Index>(p + 1)]), u);
  };
  auto lower = [&](Eigen::Index j) { return j >= static_cast<Eigen::Index>(p) ? opt.min_log_sigma : -INFINITY; };
  auto upper = [&](Eigen::Index j) { return j >= static_cast<Eigen::Index>(p) ? opt.max_log_sigma : INFINITY; };
  auto project = [&](Eigen::VectorXd th) {
    for (Eigen::Index j = 0; j < th.size(); ++j) th[j] = std::clamp(th[j], lower(j), upper(j));
    return th;
  };
  const double h = 1e-4;
  auto gradient = [&](const Eigen::VectorXd& th) {
    Eigen::VectorXd g(th.size());
    for (Eigen::Index j = 0; j < th.size(); ++j) {
      Eigen::VectorXd a = th, b = th;
      a[j] += h;
      b[j] -= h;
      g[j] = (f(a) - f(b)) / (2 * h);
    }
    return g;
  };
  // Coordinates pinned at a bound with the gradient pushing outward.
  auto active = [&](const Eigen::VectorXd& th, const Eigen::VectorXd& g) {
    std::vector<bool> a(static_cast<std::size_t>(th.size()), false);
    for (Eigen::Index j = 0; j < th.size(); ++j)
      a[static_cast<std::size_t>(j)] = (th[j] <= lower(j) && g[j] > 0) || (th[j] >= upper(j) && g[j] < 0);
    return a;
  };

  auto projected_norm = [&](const Eigen::VectorXd& gg, const std::vector<bool>& act) {
    double n = 0;
    for (Eigen::Index j = 0; j < gg.size(); ++j)
      if (!act[static_cast<std::size_t>(j)]) n = std::max(n, std::abs(gg[j]));
    return n;
  };
  auto reset_mode = [&](const Eigen::VectorXd& th) {
    std::vector<double> beta(th.data(), th.data() + p);
    lap(beta, std::exp(th[static_cast<Eigen::Index>(p)]), std::exp(th[static_cast<Eigen::Index>(p + 1)]), u_cur);
  };

  struct Run {
    Eigen::VectorXd th;
    double fx = 0;
    double gradient_norm = 0;
    int iterations = 0;
    bool converged = false;
    bool separation = false;
    std::string message;
    std::vector<double> trace;
  };

  // Projected BFGS with backtracking (Armijo) line search.
  auto bfgs = [&](Eigen::VectorXd th) {
    Run run;
    reset_mode(th);
    double fx = f(th);
    Eigen::VectorXd g = gradient(th);
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(th.size(), th.size());
    run.trace.push_back(-fx);
    std::vector<bool> act = active(th, g);
    int stalled = 0;
    for (run.iterations = 0; run.iterations < opt.max_iterations; ++run.iterations) {
      run.gradient_norm = projected_norm(g, act);
      if (run.gradient_norm < opt.gradient_tolerance) {
        run.converged = true;
        break;
      }
      Eigen::VectorXd dir = -Hinv * g;
      for (Eigen::Index j = 0; j < dir.size(); ++j)
        if (act[static_cast<std::size_t>(j)]) dir[j] = 0;
      if (dir.dot(g) >= 0) {
        Hinv.setIdentity();
        dir = -g;
        for (Eigen::Index j = 0; j < dir.size(); ++j)
          if (act[static_cast<std::size_t>(j)]) dir[j] = 0;
      }
      // One iteration moves no coordinate by more than 5.
      const double maxc = dir.lpNorm<Eigen::Infinity>();
      if (maxc > 5.0) dir *= 5.0 / maxc;

      double step = 1.0, fn = INFINITY;
      Eigen::VectorXd cand;
      for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
        cand = project(th + step * dir);
        fn = f(cand);
        if (fn <= fx + 1e-4 * g.dot(cand - th)) break;
      }
      if (!(fn < fx)) {
        if (!Hinv.isIdentity()) {
          Hinv.setIdentity();
          continue;
        }
        run.converged = run.gradient_norm < 100 * opt.gradient_tolerance;
        if (!run.converged) run.message = "line search failed";
        break;
      }
      const Eigen::VectorXd s = cand - th;
      th = cand;
      reset_mode(th);
      const double improvement = fx - fn;
      fx = fn;
      run.trace.push_back(-fx);
      const Eigen::VectorXd g_new = gradient(th);
      const Eigen::VectorXd yv = g_new - g;
      g = g_new;
      const auto act_new = active(th, g);
      const double sy = s.dot(yv);
      if (act_new != act) {
        Hinv.setIdentity();
      } else if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(th.size(), th.size());
        Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
      }
      act = act_new;
      if (th.head(static_cast<Eigen::Index>(p)).lpNorm<Eigen::Infinity>() > opt.separation_bound) {
        run.separation = true;
        run.message = "fixed effects diverging (separation)";
        break;
      }
      stalled = improvement < 1e-12 * (1.0 + std::abs(fx)) ? stalled + 1 : 0;
      if (stalled >= 3) {
        run.gradient_norm = projected_norm(g, act);
        run.converged = run.gradient_norm < 100 * opt.gradient_tolerance;
        if (!run.converged) run.message = "stalled before reaching the gradient tolerance";
        break;
      }
    }
    if (!run.converged && run.message.empty()) run.message = "iteration limit reached";
    if (run.separation) run.converged = false;
    run.th = th;
    run.fx = fx;
    return run;
  };

  Eigen::VectorXd th0(static_cast<Eigen::Index>(m));
  const auto start = logistic_start(data);
  for (std::size_t j = 0; j < p; ++j) th0[static_cast<Eigen::Index>(j)] = start[j];
  th0[static_cast<Eigen::Index>(p)] = std::log(0.5);
  th0[static_cast<Eigen::Index>(p + 1)] = std::log(0.5);
  Run best = bfgs(th0);

  // On the log scale the gradient vanishes like sigma^2 near zero, so a
  // boundary optimum is approached only slowly. Refit with small components
  // pinned at the lower bound and keep whichever fit is better.
  for (bool improved = true; improved && best.converged;) {
    improved = false;
    for (std::size_t j = p; j < m; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      if (best.th[ji] <= opt.min_log_sigma || best.th[ji] > std::log(0.3)) continue;
      Eigen::VectorXd snapped = best.th;
      snapped[ji] = opt.min_log_sigma;
      Run alt = bfgs(snapped);
      if (alt.converged && alt.fx <= best.fx) {
        best = std::move(alt);
        improved = true;
      }
    }
  }
  reset_mode(best.th);
  const Eigen::VectorXd th = best.th;
  const double fx = best.fx;
  fit.iterations = best.iterations;
  fit.converged = best.converged;
  fit.separation = best.separation;
  fit.message = best.message;
  fit.gradient_norm = best.gradient_norm;
  fit.loglik_trace = best.trace;

  for (std::size_t j = 0; j < p; ++j) fit.beta[j] = th[static_cast<Eigen::Index>(j)];
  fit.sigma2_reader = std::exp(2 * th[static_cast<Eigen::Index>(p)]);
  fit.sigma2_case = std::exp(2 * th[static_cast<Eigen::Index>(p + 1)]);
  // Variance components pinned at the lower bound are reported as zero.
  if (th[static_cast<Eigen::Index>(p)] <= opt.min_log_sigma) fit.sigma2_reader = 0.0;
  if (th[static_cast<Eigen::Index>(p + 1)] <= opt.min_log_sigma) fit.sigma2_case = 0.0;
  fit.loglik = -fx;

  // Wald standard errors from the numerical Hessian over free coordinates.
  std::vector<Eigen::Index> free;
  for (Eigen::Index j = 0; j < th.size(); ++j)
    if (!(j >= static_cast<Eigen::Index>(p) && (th[j] <= lower(j) + 1e-9 || th[j] >= upper(j) - 1e-9)))
      free.push_back(j);
  const auto k = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd H(k, k);
  const double hh = 1e-3;
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a; b < k; ++b) {
      auto at = [&](double da, double db) {
        Eigen::VectorXd t = th;
        t[free[static_cast<std::size_t>(a)]] += da;
        t[free[static_cast<std::size_t>(b)]] += db;
        return f(t);
      };
      double v;
      if (a == b)
        v = (at(hh, 0) - 2 * fx + at(-hh, 0)) / (hh * hh);
      else
        v = (at(hh, hh) - at(hh, -hh) - at(-hh, hh) + at(-hh, -hh)) / (4 * hh * hh);
      H(a, b) = H(b, a) = v;
    }
  }
  auto wald = [&](const Eigen::MatrixXd& Hs, Eigen::Index dim) {
    Eigen::LLT<Eigen::MatrixXd> llt(Hs.topLeftCorner(dim, dim));
    if (llt.info() != Eigen::Success) return false;
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(dim, dim));
    for (Eigen::Index a = 0; a < dim; ++a) {
      const auto j = free[static_cast<std::size_t>(a)];
      if (j >= static_cast<Eigen::Index>(p)) continue;
      const auto ju = static_cast<std::size_t>(j);
      fit.se[ju] = std::sqrt(cov(a, a));
      fit.z[ju] = fit.beta[ju] / fit.se[ju];
      fit.p[ju] = std::erfc(std::abs(fit.z[ju]) / std::sqrt(2.0));
    }
    return true;
  };
  // A variance component near zero leaves its log-scale direction flat; fall
  // back to the fixed-effect block (standard errors conditional on the
  // variance estimates).
  if (!wald(H, k) && !wald(H, static_cast<Eigen::Index>(p))) {
    if (fit.message.empty()) fit.message = "Hessian not positive definite; standard errors unavailable";
  }
  return fit;
}

std::string to_string(GlmmSubset s) {
  switch (s) {
    case GlmmSubset::all:
      return "all";
    case GlmmSubset::reference_positive:
      return "reference-positive";
    case GlmmSubset::reference_negative:
      return "reference-negative";
  }
  return "all";
}

GlmmData glmm_data_from_ratings(const std::vector<ReaderRating>& ratings, const ReferenceLabels& reference,
                                GlmmSubset subset, CallSource source) {
  struct Row {
    int y;
    std::string reader, item;
    Condition cond;
  };
  std::vector<Row> rows;
  std::set<Condition> conds;
  for (const auto& r : ratings) {
    auto ref = reference.find(r.case_id);
    if (ref == reference.end()) continue;
    if (subset == GlmmSubset::reference_positive && ref->second != 1) continue;
    if (subset == GlmmSubset::reference_negative && ref->second != 0) continue;
    const int call = call_of(r, source);
    if (call < 0) continue;
    rows.push_back({call == ref->second ? 1 : 0, r.reader_id, r.case_id, r.condition});
    conds.insert(r.condition);
  }
  if (conds.size() < 2) throw ValidationError("GLMM needs >= 2 reading conditions in subset " + to_string(subset));
  std::map<std::string, int> readers, items;
  for (const auto& r : rows) {
    readers.emplace(r.reader, 0);
    items.emplace(r.item, 0);
  }
  int k = 0;
  for (auto& [id, idx] : readers) idx = k++;
  k = 0;
  for (auto& [id, idx] : items) idx = k++;

  // Reference level: grayscale-only when present, else the first condition.
  const Condition ref_level = conds.contains(Condition::grayscale_only) ? Condition::grayscale_only : *conds.begin();
  std::vector<Condition> contrasts;
  for (auto c : kConditions)
    if (conds.contains(c) && c != ref_level) contrasts.push_back(c);

  GlmmData d;
  d.p = 1 + contrasts.size();
  d.n_readers = readers.size();
  d.n_cases = items.size();
  d.fixed_names.push_back("(intercept) " + to_string(ref_level));
  for (auto c : contrasts) d.fixed_names.push_back(to_string(c) + " vs " + to_string(ref_level));
  for (const auto& r : rows) {
    d.y.push_back(r.y);
    d.reader.push_back(readers.at(r.reader));
    d.item.push_back(items.at(r.item));
    d.x.push_back(1.0);
    for (auto c : contrasts) d.x.push_back(r.cond == c ? 1.0 : 0.0);
  }
  return d;
}

GlmmData simulate_glmm(const GlmmSimulation& sim, std::uint64_t seed) {
  if (sim.readers < 1 || sim.cases < 1) throw ValidationError("simulation needs readers and cases");
  auto rng = make_rng(seed, {0x611});
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> br(static_cast<std::size_t>(sim.readers)), bc(static_cast<std::size_t>(sim.cases));
  for (auto& v : br) v = sim.sigma_reader * z(rng);
  for (auto& v : bc) v = sim.sigma_case * z(rng);
  GlmmData d;
  const std::size_t k = sim.condition_effects.size();
  d.p = 1 + k;
  d.n_readers = br.size();
  d.n_cases = bc.size();
  d.fixed_names.push_back("(intercept)");
  for (std::size_t j = 0; j < k; ++j) d.fixed_names.push_back("condition" + std::to_string(j + 1));
  for (int r = 0; r < sim.readers; ++r) {
    for (int c = 0; c < sim.cases; ++c) {
      for (std::size_t cond = 0; cond <= k; ++cond) {
        double eta = sim.intercept + br[static_cast<std::size_t>(r)] + bc[static_cast<std::size_t>(c)];
        if (cond > 0) eta += sim.condition_effects[cond - 1];
        d.y.push_back(unif(rng) < inv_logit(eta) ? 1 : 0);
        d.reader.push_back(r);
        d.item.push_back(c);
        d.x.push_back(1.0);
        for (std::size_t j = 1; j <= k; ++j) d.x.push_back(cond == j ? 1.0 : 0.0);
      }
    }
  }
  return d;
}

json to_json(const GlmmFit& f) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json fixed = json::array();
  for (std::size_t j = 0; j < f.beta.size(); ++j)
    fixed.push_back({{"term", f.names[j]}, {"estimate", num(f.beta[j])}, {"se", num(f.se[j])},
                     {"z", num(f.z[j])}, {"p", num(f.p[j])}});
  return json{{"fixed_effects", fixed},
              {"variance_components", {{"reader", num(f.sigma2_reader)}, {"case", num(f.sigma2_case)}}},
              {"loglik", num(f.loglik)},
              {"method", "Laplace"},
              {"converged", f.converged},
              {"separation", f.separation},
              {"gradient_norm", num(f.gradient_norm)},
              {"iterations", f.iterations},
              {"message", f.message}};
}

}  // namespace tdce::mrmc
