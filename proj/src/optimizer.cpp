#include "c3po/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace c3po {

AdamWState AdamWState::zeros_like(const PolicyParams& params) {
  AdamWState s;
  s.m = PolicyGrad::zeros_like(params);
  s.v = PolicyGrad::zeros_like(params);
  return s;
}

namespace {

void update_block(Mat& theta, const Mat& g, Mat& m, Mat& v, std::int64_t t,
                  const AdamWConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  if (cfg.weight_decay != 0.0) theta *= 1.0 - cfg.learning_rate * cfg.weight_decay;
  theta.array() -=
      cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

}  // namespace

PolicyParams optimizer_step(const PolicyParams& params, const PolicyGrad& grad, AdamWState& state,
                            const AdamWConfig& cfg) {
  if (!grad.router.allFinite())
    throw std::runtime_error("optimizer_step: non-finite gradient in block 'router'");
  for (std::size_t e = 0; e < grad.experts.size(); ++e)
    if (!grad.experts[e].allFinite())
      throw std::runtime_error("optimizer_step: non-finite gradient in block 'expert_" +
                               std::to_string(e) + "'");

  PolicyParams out = params;
  state.step += 1;
  update_block(out.router, grad.router, state.m.router, state.v.router, state.step, cfg);
  for (std::size_t e = 0; e < out.experts.size(); ++e)
    update_block(out.experts[e], grad.experts[e], state.m.experts[e], state.v.experts[e],
                 state.step, cfg);
  out.version = params.version + 1;
  return out;
}

}  // namespace c3po
