#include <doctest.h>

#include <cmath>

#include "c3po/optimizer.hpp"

using namespace c3po;

namespace {

PolicyParams tiny_params() {
  PolicyParams p = PolicyParams::zeros(3, 1, 2, 1);
  p.router.setConstant(0.5);
  for (Mat& w : p.experts) w.setConstant(1.0);
  return p;
}

}  // namespace

TEST_CASE("zero gradient with zero decay leaves params unchanged, moments decay") {
  PolicyParams p = tiny_params();
  AdamWState st = AdamWState::zeros_like(p);
  AdamWConfig cfg;
  cfg.learning_rate = 0.1;
  const PolicyGrad zero = PolicyGrad::zeros_like(p);
  const PolicyParams q = optimizer_step(p, zero, st, cfg);
  CHECK((q.router - p.router).cwiseAbs().maxCoeff() == 0.0);
  for (std::size_t e = 0; e < q.experts.size(); ++e)
    CHECK((q.experts[e] - p.experts[e]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(q.version == p.version + 1);

  // nonzero moments keep decaying by their beta factors under zero gradient
  AdamWState loaded = AdamWState::zeros_like(p);
  loaded.m.router.setConstant(0.3);
  loaded.v.router.setConstant(0.2);
  static_cast<void>(optimizer_step(p, zero, loaded, cfg));
  CHECK(loaded.m.router(0, 0) == doctest::Approx(0.3 * 0.9).epsilon(1e-12));
  CHECK(loaded.v.router(0, 0) == doctest::Approx(0.2 * 0.999).epsilon(1e-12));
}

TEST_CASE("decoupled decay shrinks params by (1 - lr*wd) per step") {
  PolicyParams p = tiny_params();
  AdamWState st = AdamWState::zeros_like(p);
  AdamWConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  const PolicyGrad zero = PolicyGrad::zeros_like(p);
  PolicyParams q = optimizer_step(p, zero, st, cfg);
  CHECK(q.experts[0](0, 0) == doctest::Approx(1.0 * (1.0 - 0.05)).epsilon(1e-12));
  q = optimizer_step(q, zero, st, cfg);
  CHECK(q.experts[0](0, 0) == doctest::Approx(std::pow(0.95, 2)).epsilon(1e-12));
}

TEST_CASE("constant gradient drives |update| toward lr (bias-corrected fixed point)") {
  PolicyParams p = tiny_params();
  AdamWState st = AdamWState::zeros_like(p);
  AdamWConfig cfg;
  cfg.learning_rate = 0.01;
  PolicyGrad g = PolicyGrad::zeros_like(p);
  g.experts[0].setConstant(2.0);

  // with constant gradient, bias correction makes m_hat = g and v_hat = g^2
  // exactly, so each update is lr * g / (|g| + eps) from the first step on
  double prev = p.experts[0](0, 0);
  PolicyParams cur = p;
  for (int t = 0; t < 5; ++t) {
    cur = optimizer_step(cur, g, st, cfg);
    const double delta = prev - cur.experts[0](0, 0);
    CHECK(delta == doctest::Approx(cfg.learning_rate).epsilon(1e-6));
    prev = cur.experts[0](0, 0);
  }
  // untouched blocks keep their values
  CHECK(cur.router(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("non-finite gradients reject the step naming the block") {
  PolicyParams p = tiny_params();
  AdamWState st = AdamWState::zeros_like(p);
  const AdamWState before = st;
  PolicyGrad g = PolicyGrad::zeros_like(p);
  g.experts[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(static_cast<void>(optimizer_step(p, g, st, AdamWConfig{})),
                       doctest::Contains("expert_1"), std::runtime_error);
  CHECK(st.step == before.step);  // state untouched
  CHECK((st.m.experts[1] - before.m.experts[1]).cwiseAbs().maxCoeff() == 0.0);

  PolicyGrad r = PolicyGrad::zeros_like(p);
  r.router(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(static_cast<void>(optimizer_step(p, r, st, AdamWConfig{})),
                       doctest::Contains("router"), std::runtime_error);
}

TEST_CASE("first-step bias correction matches the closed form") {
  PolicyParams p = tiny_params();
  AdamWState st = AdamWState::zeros_like(p);
  AdamWConfig cfg;
  cfg.learning_rate = 0.5;
  PolicyGrad g = PolicyGrad::zeros_like(p);
  g.router.setConstant(3.0);
  const PolicyParams q = optimizer_step(p, g, st, cfg);
  // m_hat = g, v_hat = g^2 at t=1, update = lr*g/(|g|+eps)
  const double expect = 0.5 - cfg.learning_rate * 3.0 / (3.0 + cfg.eps);
  CHECK(q.router(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}
