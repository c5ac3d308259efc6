#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "c3po/types.hpp"

// Softmax-family kernels shared by the policy and the objectives. All take
// Eigen expressions and return dense vectors of the expression's scalar type.

namespace c3po {

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  const S m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

template <typename Derived>
VecX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  const S m = logits.maxCoeff();
  VecX<S> p = (logits.array() - m).exp();
  p /= p.sum();
  return p;
}

template <typename Derived>
VecX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  return logits.array() - logsumexp(logits);
}

/// Shannon entropy in nats, with the 0*log(0) := 0 convention.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& probs) {
  using S = typename Derived::Scalar;
  S h = S(0);
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const S p = probs(i);
    if (p > S(0)) h -= p * std::log(p);
  }
  return h;
}

/// Exact KL(p || q) over a shared support. Throws when q lacks support
/// somewhere p places mass.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p,
                                        const Eigen::MatrixBase<DerivedQ>& q) {
  using S = typename DerivedP::Scalar;
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
  S kl = S(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const S pi = p(i);
    if (pi <= S(0)) continue;
    const S qi = q(i);
    if (qi <= S(0)) throw std::domain_error("kl_divergence: reference lacks support at index " + std::to_string(i));
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace c3po
