#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "c3po/rng.hpp"
#include "c3po/types.hpp"
#include "c3po/vocab.hpp"

namespace c3po {

// Mixture-of-experts autoregressive softmax policy over a fixed vocabulary.
//
// The context is featurized as the one-hot window of the last `context_order`
// token ids (left-padded with a synthetic pad id) plus a bias feature. Router
// and expert layers are linear in those features, so log-probabilities have
// exact closed-form gradients.
//
// Params are immutable snapshots: every function here is pure and safe to
// call concurrently on a shared snapshot. Updates construct a new snapshot
// with a bumped version.

struct PolicyParams {
  int vocab_size = 0;
  int context_order = 3;
  int expert_count = 1;
  int top_k = 1;
  /// With pair features on, every unordered slot pair contributes a joint
  /// one-hot feature on top of the per-slot ones; closer to a true n-gram
  /// table and free of cross-context interference on shared rows.
  bool pair_features = false;
  /// Number of sequence-head positions carried as anchored features. The
  /// head of the sequence is the prompt, so these keep the question visible
  /// however far generation has advanced past the sliding window.
  int head_features = 0;
  Mat router;                // feature_dim x expert_count
  std::vector<Mat> experts;  // expert_count matrices, feature_dim x vocab_size
  std::int64_t version = 0;

  int slot_width() const { return vocab_size + 1; }
  int pair_count() const { return pair_features ? context_order * (context_order - 1) / 2 : 0; }
  int feature_dim() const {
    return (context_order + head_features) * slot_width() +
           pair_count() * slot_width() * slot_width() + 1;
  }
  int pad_token() const { return vocab_size; }
  std::int64_t parameter_count() const;

  static PolicyParams zeros(int vocab_size, int context_order, int expert_count, int top_k,
                            bool pair_features = false, int head_features = 0);
  /// Gaussian init with the given scale; scale 0 gives the uniform policy.
  static PolicyParams random(int vocab_size, int context_order, int expert_count, int top_k,
                             double scale, Rng& rng, bool pair_features = false,
                             int head_features = 0);
};

struct TokenDistribution {
  Vec probs;                       // mixture over the vocabulary
  Vec logits;                      // log(probs); softmax(logits) == probs
  Vec router_probs;                // full softmax over all experts, pre-top-k
  Vec router_logits;
  std::vector<int> selected_experts;  // top_k ids, descending router prob
};

/// One sampled trajectory. The advantage is group-level and broadcast to all
/// tokens of the response.
struct Response {
  std::string prompt_id;
  std::vector<int> token_ids;
  std::vector<double> behavior_logprobs;  // log pi_old at the sampling temperature
  double reward = 0.0;
  double advantage = 0.0;
  bool terminated = false;  // true: ended on eos; false: cut at max_len
  int length() const { return static_cast<int>(token_ids.size()); }
};

/// Dense gradient (or moment) storage mirroring PolicyParams. Only the rows
/// of active context features are ever touched, so entries are structurally
/// sparse even though storage is dense.
struct PolicyGrad {
  Mat router;
  std::vector<Mat> experts;

  static PolicyGrad zeros_like(const PolicyParams& p);
  void set_zero();
  void add_scaled(const PolicyGrad& other, double scale);
  double squared_norm() const;
  double norm() const;
  bool all_finite() const;
};

/// Cached per-token forward results consumed by the backward kernels.
struct TokenForward {
  std::vector<int> active_features;
  Vec router_logits;
  Vec router_probs;            // full softmax over all experts
  std::vector<int> selected;   // top_k expert ids
  Vec gates;                   // renormalized router probs over `selected`
  std::vector<Vec> expert_probs;  // per selected expert
  Vec probs;                   // mixture
  Vec log_probs;
  double temperature = 1.0;
};

std::vector<int> active_features(const PolicyParams& params, std::span<const int> context);

TokenForward forward_detail(const PolicyParams& params, std::span<const int> context,
                            double temperature = 1.0);
TokenDistribution forward(const PolicyParams& params, std::span<const int> context,
                          double temperature = 1.0);

/// Autoregressive sampling until eos or max_len. Greedy argmax at
/// temperature 0; otherwise tokens are drawn from the tempered mixture and
/// behavior log-probs are recorded under that same tempered distribution.
Response sample_response(const PolicyParams& params, const Vocabulary& vocab,
                         std::span<const int> prompt, int max_len, double temperature,
                         std::uint64_t rng_seed);

double logprob(const TokenForward& tf, int target);

std::pair<double, PolicyGrad> logprob_and_grad(const PolicyParams& params,
                                               std::span<const int> context, int target,
                                               double temperature = 1.0);

double exact_kl(const TokenDistribution& dist_p, const TokenDistribution& dist_ref);
double entropy(const TokenDistribution& dist);

// Backward kernels. Each adds `weight * d(quantity)/d(params)` into `grad`.
void accumulate_logprob_grad(const PolicyParams& params, const TokenForward& tf, int target,
                             double weight, PolicyGrad& grad);
/// quantity = KL(pi || q) with q given as log-probs over the vocabulary.
void accumulate_kl_grad(const PolicyParams& params, const TokenForward& tf,
                        const Vec& ref_log_probs, double weight, PolicyGrad& grad);
void accumulate_entropy_grad(const PolicyParams& params, const TokenForward& tf, double weight,
                             PolicyGrad& grad);
/// quantity = sum_i F_i * P_i with P_i = mean router prob; per-token
/// contribution with routed fractions F held fixed and inv_m = 1/M.
void accumulate_balance_grad(const PolicyParams& params, const TokenForward& tf,
                             const Vec& routed_fraction, double inv_m, double weight,
                             PolicyGrad& grad);
/// quantity = mean over tokens of logsumexp(router logits)^2.
void accumulate_zloss_grad(const PolicyParams& params, const TokenForward& tf, double inv_m,
                           double weight, PolicyGrad& grad);

}  // namespace c3po
