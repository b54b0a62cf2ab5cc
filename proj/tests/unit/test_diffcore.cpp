#include <doctest.h>

#include <random>

#include "tdce/diffcore/grad_check.hpp"
#include "tdce/diffcore/optimizer.hpp"
#include "tdce/diffcore/tape.hpp"

using namespace tdce::diff;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 0.5) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

}  // namespace

TEST_CASE("every operator's backward matches finite differences") {
  std::mt19937_64 rng(11);
  ParamSet ps;
  ps.add("c1.w", random_tensor({4, 2, 3, 3}, rng), true);
  ps.add("c1.b", random_tensor({4}, rng), true);
  ps.add("s.w", random_tensor({4, 4, 3, 3}, rng), true);
  ps.add("s.b", random_tensor({4}, rng), true);
  ps.add("c2.w", random_tensor({3, 8, 3, 3}, rng), true);
  ps.add("c2.b", random_tensor({3}, rng), true);
  ps.add("d.w", random_tensor({1, 3}, rng), true);
  ps.add("d.b", random_tensor({1}, rng), true);
  const Tensor x = random_tensor({2, 8, 8}, rng, 1.0);

  LossBuilder loss = [&](Tape& t) {
    Var in = t.input(x);
    Var h = t.relu(t.conv2d(in, t.param("c1.w"), t.param("c1.b")));
    Var p = t.max_pool2(h);
    Var s = t.conv2d(p, t.param("s.w"), t.param("s.b"), {2, Padding::same});  // strided
    Var u = t.upsample2(s);
    Var cat = t.concat({u, p});
    Var c2 = t.sigmoid(t.conv2d(cat, t.param("c2.w"), t.param("c2.b")));
    Var g = t.add(t.global_avg_pool(c2), t.scale(t.global_avg_pool(c2), 0.5));
    Var logit = t.dense(g, t.param("d.w"), t.param("d.b"));
    return t.bce_with_logits(logit, 1.0);
  };
  const auto report = grad_check(ps, loss);
  for (const auto& p : report.params) INFO(p.name, " ", p.rel_error);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("shape mismatches are rejected") {
  ParamSet ps;
  ps.add("w", Tensor({2, 3, 3, 3}), true);
  ps.add("b", Tensor({2}), true);
  Tape t(ps);
  Var x = t.input(Tensor({2, 4, 4}));  // 2 channels, weights expect 3
  CHECK_THROWS_AS(t.conv2d(x, t.param("w"), t.param("b")), ShapeError);
}

TEST_CASE("a tape is consumed by backward") {
  ParamSet ps;
  ps.add("w", Tensor({1, 1}, 2.0), true);
  ps.add("b", Tensor({1}, 0.0), true);
  Tape t(ps);
  Var y = t.dense(t.input(Tensor({1}, 3.0)), t.param("w"), t.param("b"));
  const auto g = t.backward(y);
  CHECK(g[0][0] == doctest::Approx(3.0));
  CHECK(g[1][0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(t.backward(y), TapeError);
}

TEST_CASE("optimizer leaves frozen parameters bit-identical") {
  std::mt19937_64 rng(2);
  ParamSet ps;
  ps.add("frozen", random_tensor({5}, rng), false);
  ps.add("live", random_tensor({5}, rng), true);
  const Tensor before = ps.at("frozen").value;
  const Tensor live_before = ps.at("live").value;
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.weight_decay = 0.1;
    Optimizer opt(ps, cfg);
    Gradients g = zero_gradients(ps);
    for (auto& t : g) t.fill(1.0);
    opt.step(ps, g);
  }
  CHECK(ps.at("frozen").value == before);
  CHECK_FALSE(ps.at("live").value == live_before);
}

TEST_CASE("optimizer rejects a changed trainable mask") {
  ParamSet ps;
  ps.add("a", Tensor({2}, 1.0), true);
  Optimizer opt(ps, {});
  ps.set_trainable_prefix("a", false);
  CHECK_THROWS(opt.step(ps, zero_gradients(ps)));
}

TEST_CASE("adam first step moves each coordinate by about lr") {
  ParamSet ps;
  ps.add("a", Tensor({3}, 0.0), true);
  OptimizerConfig cfg;
  cfg.lr = 0.01;
  Optimizer opt(ps, cfg);
  Gradients g{Tensor({3}, std::vector<double>{2.0, -0.5, 1e-3})};
  opt.step(ps, g);
  CHECK(ps.at("a").value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(ps.at("a").value[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(ps.at("a").value[2] == doctest::Approx(-0.01).epsilon(1e-4));
}

TEST_CASE("parameter hashes track values, names and shapes") {
  ParamSet a, b;
  a.add("x.w", Tensor({2}, 1.0), true);
  b.add("x.w", Tensor({2}, 1.0), false);
  CHECK(a.hash() == b.hash());
  b.at("x.w").value[1] = 1.0000000001;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash_prefix("x.") == a.hash());
}
