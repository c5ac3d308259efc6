#include "c3po/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "c3po/numerics.hpp"

namespace c3po {

std::int64_t PolicyParams::parameter_count() const {
  std::int64_t n = router.size();
  for (const Mat& w : experts) n += w.size();
  return n;
}

PolicyParams PolicyParams::zeros(int vocab_size, int context_order, int expert_count, int top_k,
                                 bool pair_features, int head_features) {
  if (vocab_size < 2) throw std::invalid_argument("PolicyParams: vocab_size must be >= 2");
  if (context_order < 1) throw std::invalid_argument("PolicyParams: context_order must be >= 1");
  if (expert_count < 1) throw std::invalid_argument("PolicyParams: expert_count must be >= 1");
  if (top_k < 1 || top_k > expert_count)
    throw std::invalid_argument("PolicyParams: top_k must be in [1, expert_count]");
  if (head_features < 0) throw std::invalid_argument("PolicyParams: head_features must be >= 0");
  PolicyParams p;
  p.vocab_size = vocab_size;
  p.context_order = context_order;
  p.expert_count = expert_count;
  p.top_k = top_k;
  p.pair_features = pair_features;
  p.head_features = head_features;
  p.router = Mat::Zero(p.feature_dim(), expert_count);
  p.experts.assign(static_cast<std::size_t>(expert_count), Mat::Zero(p.feature_dim(), vocab_size));
  return p;
}

PolicyParams PolicyParams::random(int vocab_size, int context_order, int expert_count, int top_k,
                                  double scale, Rng& rng, bool pair_features,
                                  int head_features) {
  PolicyParams p = zeros(vocab_size, context_order, expert_count, top_k, pair_features,
                         head_features);
  if (scale == 0.0) return p;
  auto fill = [&](Mat& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * rng.next_gauss();
  };
  fill(p.router);
  for (Mat& w : p.experts) fill(w);
  return p;
}

PolicyGrad PolicyGrad::zeros_like(const PolicyParams& p) {
  PolicyGrad g;
  g.router = Mat::Zero(p.router.rows(), p.router.cols());
  g.experts.reserve(p.experts.size());
  for (const Mat& w : p.experts) g.experts.push_back(Mat::Zero(w.rows(), w.cols()));
  return g;
}

void PolicyGrad::set_zero() {
  router.setZero();
  for (Mat& w : experts) w.setZero();
}

void PolicyGrad::add_scaled(const PolicyGrad& other, double scale) {
  router += scale * other.router;
  for (std::size_t e = 0; e < experts.size(); ++e) experts[e] += scale * other.experts[e];
}

double PolicyGrad::squared_norm() const {
  double s = router.squaredNorm();
  for (const Mat& w : experts) s += w.squaredNorm();
  return s;
}

double PolicyGrad::norm() const { return std::sqrt(squared_norm()); }

bool PolicyGrad::all_finite() const {
  if (!router.allFinite()) return false;
  for (const Mat& w : experts)
    if (!w.allFinite()) return false;
  return true;
}

std::vector<int> active_features(const PolicyParams& params, std::span<const int> context) {
  const int n = params.context_order;
  const int w = params.slot_width();
  std::vector<int> active;
  active.reserve(static_cast<std::size_t>(n + params.head_features + params.pair_count()) + 1);
  std::vector<int> window(static_cast<std::size_t>(n));
  const int len = static_cast<int>(context.size());
  for (int j = 0; j < n; ++j) {
    const int pos = len - n + j;
    int tok = params.pad_token();
    if (pos >= 0) {
      tok = context[static_cast<std::size_t>(pos)];
      if (tok < 0 || tok >= params.vocab_size)
        throw std::invalid_argument("active_features: token id out of range");
    }
    window[static_cast<std::size_t>(j)] = tok;
    active.push_back(j * w + tok);
  }
  for (int j = 0; j < params.head_features; ++j) {
    int tok = params.pad_token();
    if (j < len) {
      tok = context[static_cast<std::size_t>(j)];
      if (tok < 0 || tok >= params.vocab_size)
        throw std::invalid_argument("active_features: token id out of range");
    }
    active.push_back((n + j) * w + tok);
  }
  if (params.pair_features) {
    const int pair_base = (n + params.head_features) * w;
    int pair = 0;
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b, ++pair)
        active.push_back(pair_base + (pair * w + window[static_cast<std::size_t>(a)]) * w +
                         window[static_cast<std::size_t>(b)]);
  }
  active.push_back(params.feature_dim() - 1);  // bias
  return active;
}

namespace {

Vec sum_rows(const Mat& w, const std::vector<int>& active) {
  Vec out = Vec::Zero(w.cols());
  for (int f : active) out += w.row(f).transpose();
  return out;
}

[[noreturn]] void throw_non_finite(const char* block, const PolicyParams& params) {
  throw std::runtime_error(std::string("policy forward: non-finite ") + block +
                           " logits (V=" + std::to_string(params.vocab_size) +
                           ", N_e=" + std::to_string(params.expert_count) +
                           ", version=" + std::to_string(params.version) + ")");
}

}  // namespace

TokenForward forward_detail(const PolicyParams& params, std::span<const int> context,
                            double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("forward_detail: temperature must be > 0");
  TokenForward tf;
  tf.temperature = temperature;
  tf.active_features = active_features(params, context);

  tf.router_logits = sum_rows(params.router, tf.active_features);
  if (!tf.router_logits.allFinite()) throw_non_finite("router", params);
  tf.router_probs = softmax(tf.router_logits);

  // Top-k by router probability; ties break toward the lower expert id.
  std::vector<int> order(static_cast<std::size_t>(params.expert_count));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return tf.router_probs(a) > tf.router_probs(b);
  });
  tf.selected.assign(order.begin(), order.begin() + params.top_k);

  double gate_mass = 0.0;
  for (int e : tf.selected) gate_mass += tf.router_probs(e);
  tf.gates = Vec(params.top_k);
  for (int i = 0; i < params.top_k; ++i) tf.gates(i) = tf.router_probs(tf.selected[static_cast<std::size_t>(i)]) / gate_mass;

  tf.probs = Vec::Zero(params.vocab_size);
  tf.expert_probs.resize(static_cast<std::size_t>(params.top_k));
  for (int i = 0; i < params.top_k; ++i) {
    const int e = tf.selected[static_cast<std::size_t>(i)];
    Vec z = sum_rows(params.experts[static_cast<std::size_t>(e)], tf.active_features) / temperature;
    if (!z.allFinite()) throw_non_finite("expert", params);
    tf.expert_probs[static_cast<std::size_t>(i)] = softmax(z);
    tf.probs += tf.gates(i) * tf.expert_probs[static_cast<std::size_t>(i)];
  }
  tf.log_probs = tf.probs.array().log();
  return tf;
}

TokenDistribution forward(const PolicyParams& params, std::span<const int> context,
                          double temperature) {
  TokenForward tf = forward_detail(params, context, temperature);
  TokenDistribution d;
  d.probs = std::move(tf.probs);
  d.logits = std::move(tf.log_probs);
  d.router_probs = std::move(tf.router_probs);
  d.router_logits = std::move(tf.router_logits);
  d.selected_experts = std::move(tf.selected);
  return d;
}

Response sample_response(const PolicyParams& params, const Vocabulary& vocab,
                         std::span<const int> prompt, int max_len, double temperature,
                         std::uint64_t rng_seed) {
  if (max_len < 1) throw std::invalid_argument("sample_response: max_len must be >= 1");
  if (temperature < 0.0) throw std::invalid_argument("sample_response: temperature must be >= 0");
  Rng rng(rng_seed);
  Response r;
  std::vector<int> context(prompt.begin(), prompt.end());
  const bool greedy = temperature == 0.0;
  while (r.length() < max_len) {
    const TokenForward tf = forward_detail(params, context, greedy ? 1.0 : temperature);
    int tok;
    if (greedy) {
      Eigen::Index arg = 0;
      tf.probs.maxCoeff(&arg);
      tok = static_cast<int>(arg);
    } else {
      tok = rng.categorical(tf.probs);
    }
    r.token_ids.push_back(tok);
    r.behavior_logprobs.push_back(tf.log_probs(tok));
    context.push_back(tok);
    if (tok == vocab.eos_id()) {
      r.terminated = true;
      break;
    }
  }
  return r;
}

double logprob(const TokenForward& tf, int target) { return tf.log_probs(target); }

std::pair<double, PolicyGrad> logprob_and_grad(const PolicyParams& params,
                                               std::span<const int> context, int target,
                                               double temperature) {
  if (target < 0 || target >= params.vocab_size)
    throw std::invalid_argument("logprob_and_grad: target out of range");
  const TokenForward tf = forward_detail(params, context, temperature);
  PolicyGrad grad = PolicyGrad::zeros_like(params);
  accumulate_logprob_grad(params, tf, target, 1.0, grad);
  return {tf.log_probs(target), std::move(grad)};
}

double exact_kl(const TokenDistribution& dist_p, const TokenDistribution& dist_ref) {
  if (dist_p.probs.size() != dist_ref.probs.size())
    throw std::invalid_argument("exact_kl: distributions over different vocabularies");
  return kl_divergence(dist_p.probs, dist_ref.probs);
}

double entropy(const TokenDistribution& dist) { return entropy(dist.probs); }

namespace {

// Shared rank-1 writers: expert-logit gradient dz lands on the active rows of
// the expert matrix (scaled by 1/T from the tempered logits); router-logit
// gradient du lands on the active rows of the router.
void add_expert_rows(const TokenForward& tf, int expert, const Vec& dz, PolicyGrad& grad) {
  Mat& w = grad.experts[static_cast<std::size_t>(expert)];
  const double inv_t = 1.0 / tf.temperature;
  for (int f : tf.active_features) w.row(f) += inv_t * dz.transpose();
}

void add_router_rows(const TokenForward& tf, const Vec& du, PolicyGrad& grad) {
  for (int f : tf.active_features) grad.router.row(f) += du.transpose();
}

}  // namespace

void accumulate_logprob_grad(const PolicyParams& params, const TokenForward& tf, int target,
                             double weight, PolicyGrad& grad) {
  const double pi_t = tf.probs(target);
  Vec du = Vec::Zero(params.expert_count);
  for (int i = 0; i < params.top_k; ++i) {
    const int e = tf.selected[static_cast<std::size_t>(i)];
    const Vec& pe = tf.expert_probs[static_cast<std::size_t>(i)];
    const double coef = weight * tf.gates(i) * pe(target) / pi_t;
    Vec dz = -coef * pe;
    dz(target) += coef;
    add_expert_rows(tf, e, dz, grad);
    du(e) = weight * tf.gates(i) * (pe(target) / pi_t - 1.0);
  }
  add_router_rows(tf, du, grad);
}

namespace {

// log(pi/q) with zero-probability coordinates pinned to 0. Where pi_k
// underflows to exact zero the true per-coordinate contribution vanishes, so
// the pin preserves the limit while keeping 0 * (-inf) out of the products.
// A reference hole under live mass is a contract violation.
Vec guarded_log_ratio(const TokenForward& tf, const Vec& ref_log_probs) {
  Vec rho = Vec::Zero(tf.probs.size());
  for (Eigen::Index k = 0; k < tf.probs.size(); ++k) {
    if (tf.probs(k) <= 0.0) continue;
    rho(k) = tf.log_probs(k) - ref_log_probs(k);
    if (!std::isfinite(rho(k)))
      throw std::domain_error("kl gradient: reference lacks support at token " +
                              std::to_string(k));
  }
  return rho;
}

Vec guarded_log(const TokenForward& tf) {
  Vec lp = Vec::Zero(tf.probs.size());
  for (Eigen::Index k = 0; k < tf.probs.size(); ++k)
    if (tf.probs(k) > 0.0) lp(k) = tf.log_probs(k);
  return lp;
}

}  // namespace

void accumulate_kl_grad(const PolicyParams& params, const TokenForward& tf,
                        const Vec& ref_log_probs, double weight, PolicyGrad& grad) {
  const Vec rho = guarded_log_ratio(tf, ref_log_probs);
  const double kl = tf.probs.dot(rho);
  Vec du = Vec::Zero(params.expert_count);
  for (int i = 0; i < params.top_k; ++i) {
    if (tf.gates(i) == 0.0) continue;
    const int e = tf.selected[static_cast<std::size_t>(i)];
    const Vec& pe = tf.expert_probs[static_cast<std::size_t>(i)];
    const double mean_e = pe.dot(rho);
    const Vec dz = weight * tf.gates(i) * pe.cwiseProduct(Vec(rho.array() - mean_e));
    add_expert_rows(tf, e, dz, grad);
    du(e) = weight * tf.gates(i) * (mean_e - kl);
  }
  add_router_rows(tf, du, grad);
}

void accumulate_entropy_grad(const PolicyParams& params, const TokenForward& tf, double weight,
                             PolicyGrad& grad) {
  const Vec lp = guarded_log(tf);
  const double h = -tf.probs.dot(lp);
  Vec du = Vec::Zero(params.expert_count);
  for (int i = 0; i < params.top_k; ++i) {
    if (tf.gates(i) == 0.0) continue;
    const int e = tf.selected[static_cast<std::size_t>(i)];
    const Vec& pe = tf.expert_probs[static_cast<std::size_t>(i)];
    const double mean_e = pe.dot(lp);
    const Vec dz = -weight * tf.gates(i) * pe.cwiseProduct(Vec(lp.array() - mean_e));
    add_expert_rows(tf, e, dz, grad);
    du(e) = -weight * tf.gates(i) * (mean_e + h);
  }
  add_router_rows(tf, du, grad);
}

void accumulate_balance_grad(const PolicyParams& params, const TokenForward& tf,
                             const Vec& routed_fraction, double inv_m, double weight,
                             PolicyGrad& grad) {
  (void)params;
  const Vec& s = tf.router_probs;
  const double fs = routed_fraction.dot(s);
  const Vec du = (weight * inv_m) * s.cwiseProduct(Vec(routed_fraction.array() - fs));
  add_router_rows(tf, du, grad);
}

void accumulate_zloss_grad(const PolicyParams& params, const TokenForward& tf, double inv_m,
                           double weight, PolicyGrad& grad) {
  (void)params;
  const double lse = logsumexp(tf.router_logits);
  const Vec du = (weight * inv_m * 2.0 * lse) * tf.router_probs;
  add_router_rows(tf, du, grad);
}

}  // namespace c3po
