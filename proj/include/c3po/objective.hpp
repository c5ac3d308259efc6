#pragma once

#include <cstdint>
#include <vector>

#include "c3po/policy.hpp"
#include "c3po/scheduler.hpp"
#include "c3po/types.hpp"

namespace c3po {

enum class AdvantageStdMode { kPopulation, kSample };
enum class DegenerateGroupMode { kZeroAdvantage, kDropGroup };
enum class EntropySign { kBonus, kPenalty };
enum class BalanceVariant { kAsPrinted, kSwitchStyle };

struct ObjectiveConfig {
  double clip_eps = 0.2;
  double kl_beta = 1e-3;
  double alpha_entropy = 5e-4;
  double alpha_balance = 1e-5;
  double alpha_zloss = 1e-7;
  std::int64_t token_budget = 409600;
  AdvantageStdMode advantage_std_mode = AdvantageStdMode::kPopulation;
  DegenerateGroupMode degenerate_group_mode = DegenerateGroupMode::kZeroAdvantage;
  /// The total loss adds alpha_entropy * H; kBonus flips the sign so the term
  /// rewards exploration, kPenalty keeps the additive form literally.
  EntropySign entropy_sign = EntropySign::kBonus;
  BalanceVariant balance_variant = BalanceVariant::kAsPrinted;
};

/// Streaming per-batch expert statistics feeding the balance and z losses.
/// Order-invariant: only sums over tokens are kept.
struct RouterStats {
  int expert_count = 0;
  int top_k = 0;
  std::int64_t token_count = 0;  // M
  Vec prob_sums;                 // sum over tokens of the full router softmax
  Vec routed_counts;             // per expert, number of tokens routed to it
  double lse_sq_sum = 0.0;       // sum over tokens of logsumexp(router logits)^2

  static RouterStats zeros(int expert_count, int top_k);
  /// Dense form for tests: one row of router logits per token.
  static RouterStats from_logits(const Mat& router_logits, int top_k);

  void add_token(const TokenForward& tf);
  Vec mean_router_prob() const;  // P_i
  Vec routed_fraction() const;   // F_i; sums to top_k
};

struct LossBreakdown {
  double policy_term = 0.0;   // negated clipped-surrogate sum
  double kl_term = 0.0;       // raw KL sum under the objective's token weights
  double entropy_term = 0.0;  // mean per-token entropy over the trained tokens
  double balance_term = 0.0;
  double zloss_term = 0.0;
  double total = 0.0;
  std::int64_t token_count_used = 0;
};

/// Group-normalized advantages: (R_i - mean) / std over the K rewards of one
/// prompt. Zero-variance groups get all-zero advantages; dropping such groups
/// instead is the trainer's job under kDropGroup.
std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     const ObjectiveConfig& cfg);
bool degenerate_group(const std::vector<double>& rewards);

/// min(r*A, clip(r, 1-eps, 1+eps)*A).
double clipped_term(double ratio, double advantage, double clip_eps);

struct LossResult {
  LossBreakdown breakdown;
  PolicyGrad grad;    // d(breakdown.total)/d(params); empty when grad skipped
  RouterStats stats;  // over the evaluated tokens
  double kl_mean = 0.0;       // flat per-token mean, for metrics
  double min_ratio = 1.0;     // diagnostics over trained tokens
  double max_ratio = 1.0;
  bool has_grad = false;
};

/// Clipped-surrogate loss with exact token-level KL, normalized per response
/// length, per group and per prompt. Evaluates every token of the batch.
LossResult grpo_loss(const Batch& batch, const PolicyParams& params,
                     const PolicyParams& ref_params, const ObjectiveConfig& cfg,
                     bool want_grad = true);

/// Budgeted variant: the same per-token term summed over exactly the selected
/// tokens and scaled by the uniform 1/token_budget factor. Tokens outside the
/// selection contribute nothing to value or gradient.
LossResult c3po_loss(const SelectedSet& selected, const Batch& batch, const PolicyParams& params,
                     const PolicyParams& ref_params, const ObjectiveConfig& cfg,
                     bool want_grad = true);

/// B = sum_i P_i * F_i as printed (the 1/N_e and N_e factors cancel); the
/// Switch-style variant multiplies by N_e.
double balance_loss(const RouterStats& stats, BalanceVariant variant = BalanceVariant::kAsPrinted);

/// Z = mean over tokens of logsumexp(router logits)^2.
double z_loss(const RouterStats& stats);

/// Mean per-token policy entropy over the selected tokens, in nats.
double entropy_reg(const PolicyParams& params, const Batch& batch, const SelectedSet& selected);

/// Folds the weighted terms into `total`:
///   total = policy + beta*kl + sign*alpha_entropy*H + alpha_balance*B + alpha_zloss*Z.
LossBreakdown total_loss(const LossBreakdown& parts, const ObjectiveConfig& cfg);

enum class LossKind { kGrpo, kC3po };

/// One fused pass producing the full training loss (core + entropy + balance
/// + z, coefficients folded) and its exact gradient over the selected tokens.
LossResult evaluate_total_loss(const Batch& batch, const SelectedSet& selected, LossKind kind,
                               const PolicyParams& params, const PolicyParams& ref_params,
                               const ObjectiveConfig& cfg, bool want_grad = true);

}  // namespace c3po
