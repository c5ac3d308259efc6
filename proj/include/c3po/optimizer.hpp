#pragma once

#include <cstdint>

#include "c3po/policy.hpp"

namespace c3po {

struct AdamWConfig {
  double learning_rate = 3e-6;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates plus the bias-correction step counter.
struct AdamWState {
  std::int64_t step = 0;
  PolicyGrad m;
  PolicyGrad v;

  static AdamWState zeros_like(const PolicyParams& params);
};

/// One AdamW update: moment tracking with bias correction, weight decay
/// applied as a decoupled multiplicative shrink by lr*wd before the gradient
/// step. Returns a new params snapshot with a bumped version; a non-finite
/// gradient rejects the step (state untouched) naming the offending block.
PolicyParams optimizer_step(const PolicyParams& params, const PolicyGrad& grad, AdamWState& state,
                            const AdamWConfig& cfg);

}  // namespace c3po
