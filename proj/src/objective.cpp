#include "c3po/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "c3po/numerics.hpp"

namespace c3po {

RouterStats RouterStats::zeros(int expert_count, int top_k) {
  RouterStats s;
  s.expert_count = expert_count;
  s.top_k = top_k;
  s.prob_sums = Vec::Zero(expert_count);
  s.routed_counts = Vec::Zero(expert_count);
  return s;
}

RouterStats RouterStats::from_logits(const Mat& router_logits, int top_k) {
  RouterStats s = zeros(static_cast<int>(router_logits.cols()), top_k);
  for (Eigen::Index m = 0; m < router_logits.rows(); ++m) {
    const Vec row = router_logits.row(m).transpose();
    const Vec probs = softmax(row);
    std::vector<int> order(static_cast<std::size_t>(probs.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs(a) > probs(b); });
    s.token_count += 1;
    s.prob_sums += probs;
    for (int i = 0; i < top_k; ++i) s.routed_counts(order[static_cast<std::size_t>(i)]) += 1.0;
    const double lse = logsumexp(row);
    s.lse_sq_sum += lse * lse;
  }
  return s;
}

void RouterStats::add_token(const TokenForward& tf) {
  token_count += 1;
  prob_sums += tf.router_probs;
  for (int e : tf.selected) routed_counts(e) += 1.0;
  const double lse = logsumexp(tf.router_logits);
  lse_sq_sum += lse * lse;
}

Vec RouterStats::mean_router_prob() const {
  if (token_count == 0) return Vec::Zero(expert_count);
  return prob_sums / static_cast<double>(token_count);
}

Vec RouterStats::routed_fraction() const {
  if (token_count == 0) return Vec::Zero(expert_count);
  return routed_counts / static_cast<double>(token_count);
}

bool degenerate_group(const std::vector<double>& rewards) {
  for (std::size_t i = 1; i < rewards.size(); ++i)
    if (rewards[i] != rewards[0]) return false;
  return true;
}

std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     const ObjectiveConfig& cfg) {
  const std::size_t k = rewards.size();
  if (k < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double divisor = cfg.advantage_std_mode == AdvantageStdMode::kPopulation
                             ? static_cast<double>(k)
                             : static_cast<double>(k - 1);
  var /= divisor;
  const double std_dev = std::sqrt(var);
  std::vector<double> adv(k, 0.0);
  if (std_dev == 0.0) return adv;  // zero-variance group: zero advantage
  for (std::size_t i = 0; i < k; ++i) adv[i] = (rewards[i] - mean) / std_dev;
  return adv;
}

double clipped_term(double ratio, double advantage, double clip_eps) {
  if (!(ratio > 0.0)) throw std::invalid_argument("clipped_term: ratio must be positive");
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

// Light per-token router record kept for the balance-loss backward pass,
// which needs the batch-level routed fractions before it can run.
struct RouterRecord {
  std::vector<int> active_features;
  Vec router_probs;
};

struct EvalPlan {
  LossKind kind;
  bool with_aux;  // fold entropy/balance/z into total and gradient
  bool want_grad;
};

LossResult evaluate(const Batch& batch, const SelectedSet& selected, const PolicyParams& params,
                    const PolicyParams& ref_params, const ObjectiveConfig& cfg,
                    const EvalPlan& plan) {
  LossResult out;
  out.stats = RouterStats::zeros(params.expert_count, params.top_k);
  out.has_grad = plan.want_grad;
  if (plan.want_grad) out.grad = PolicyGrad::zeros_like(params);

  const std::int64_t n_tokens = selected.total_tokens;
  out.breakdown.token_count_used = n_tokens;
  if (n_tokens == 0) return out;

  const double groups = static_cast<double>(batch.prompt_count());
  const double k_size = static_cast<double>(batch.group_size);
  const double inv_budget = 1.0 / static_cast<double>(cfg.token_budget);
  const double inv_m = 1.0 / static_cast<double>(n_tokens);
  const double ent_coef =
      (cfg.entropy_sign == EntropySign::kBonus ? -1.0 : 1.0) * cfg.alpha_entropy;
  const double balance_weight =
      cfg.balance_variant == BalanceVariant::kSwitchStyle
          ? cfg.alpha_balance * static_cast<double>(params.expert_count)
          : cfg.alpha_balance;
  const double temperature = batch.temperature;

  double policy_sum = 0.0;    // sum of weighted clipped terms (pre-negation)
  double kl_weighted = 0.0;   // KL under the objective's token weights
  double kl_flat = 0.0;       // flat token mean, for metrics
  double entropy_sum = 0.0;
  out.min_ratio = std::numeric_limits<double>::infinity();
  out.max_ratio = -std::numeric_limits<double>::infinity();

  std::vector<RouterRecord> router_records;
  if (plan.want_grad && plan.with_aux && cfg.alpha_balance != 0.0)
    router_records.reserve(static_cast<std::size_t>(n_tokens));

  std::vector<int> context;
  for (const SelectionEntry& entry : selected.entries) {
    const ResponseGroup& group = batch.groups[static_cast<std::size_t>(entry.group)];
    const Response& resp = group.responses[static_cast<std::size_t>(entry.response)];
    if (resp.behavior_logprobs.size() != resp.token_ids.size())
      throw std::invalid_argument("loss: response is missing behavior log-probs");
    if (entry.included_tokens > resp.length())
      throw std::invalid_argument("loss: selection references tokens not in the batch");

    const double token_weight =
        plan.kind == LossKind::kC3po
            ? inv_budget
            : 1.0 / (groups * k_size * static_cast<double>(resp.length()));
    const double advantage = resp.advantage;

    context.assign(group.prompt_tokens.begin(), group.prompt_tokens.end());
    for (int t = 0; t < entry.included_tokens; ++t) {
      const int target = resp.token_ids[static_cast<std::size_t>(t)];
      const TokenForward tf = forward_detail(params, context, temperature);
      const TokenForward tf_ref = forward_detail(ref_params, context, temperature);

      const double logp = tf.log_probs(target);
      const double ratio = std::exp(logp - resp.behavior_logprobs[static_cast<std::size_t>(t)]);
      out.min_ratio = std::min(out.min_ratio, ratio);
      out.max_ratio = std::max(out.max_ratio, ratio);
      policy_sum += token_weight * clipped_term(ratio, advantage, cfg.clip_eps);

      const double kl = kl_divergence(tf.probs, tf_ref.probs);
      kl_weighted += token_weight * kl;
      kl_flat += inv_m * kl;

      const double h = entropy(tf.probs);
      entropy_sum += inv_m * h;

      out.stats.add_token(tf);

      if (plan.want_grad) {
        const bool clip_active = (advantage >= 0.0 && ratio <= 1.0 + cfg.clip_eps) ||
                                 (advantage <= 0.0 && ratio >= 1.0 - cfg.clip_eps);
        if (clip_active && advantage != 0.0)
          accumulate_logprob_grad(params, tf, target, -token_weight * advantage * ratio,
                                  out.grad);
        if (cfg.kl_beta != 0.0)
          accumulate_kl_grad(params, tf, tf_ref.log_probs, token_weight * cfg.kl_beta, out.grad);
        if (plan.with_aux) {
          if (cfg.alpha_entropy != 0.0)
            accumulate_entropy_grad(params, tf, ent_coef * inv_m, out.grad);
          if (cfg.alpha_zloss != 0.0)
            accumulate_zloss_grad(params, tf, inv_m, cfg.alpha_zloss, out.grad);
          if (cfg.alpha_balance != 0.0)
            router_records.push_back({tf.active_features, tf.router_probs});
        }
      }
      context.push_back(target);
    }
  }

  // Balance backward runs once the routed fractions are known.
  if (!router_records.empty()) {
    const Vec fraction = out.stats.routed_fraction();
    for (const RouterRecord& rec : router_records) {
      const double fs = fraction.dot(rec.router_probs);
      const Vec du =
          (balance_weight * inv_m) * rec.router_probs.cwiseProduct(Vec(fraction.array() - fs));
      for (int f : rec.active_features) out.grad.router.row(f) += du.transpose();
    }
  }

  out.breakdown.policy_term = -policy_sum;
  out.breakdown.kl_term = kl_weighted;
  out.kl_mean = kl_flat;
  if (plan.with_aux) {
    out.breakdown.entropy_term = entropy_sum;
    out.breakdown.balance_term = balance_loss(out.stats, cfg.balance_variant);
    out.breakdown.zloss_term = z_loss(out.stats);
    out.breakdown = total_loss(out.breakdown, cfg);
  } else {
    out.breakdown.total = out.breakdown.policy_term + cfg.kl_beta * out.breakdown.kl_term;
  }
  return out;
}

}  // namespace

LossResult grpo_loss(const Batch& batch, const PolicyParams& params,
                     const PolicyParams& ref_params, const ObjectiveConfig& cfg, bool want_grad) {
  return evaluate(batch, select_all(batch), params, ref_params, cfg,
                  {LossKind::kGrpo, /*with_aux=*/false, want_grad});
}

LossResult c3po_loss(const SelectedSet& selected, const Batch& batch, const PolicyParams& params,
                     const PolicyParams& ref_params, const ObjectiveConfig& cfg, bool want_grad) {
  return evaluate(batch, selected, params, ref_params, cfg,
                  {LossKind::kC3po, /*with_aux=*/false, want_grad});
}

double balance_loss(const RouterStats& stats, BalanceVariant variant) {
  const double b = stats.mean_router_prob().dot(stats.routed_fraction());
  return variant == BalanceVariant::kSwitchStyle ? static_cast<double>(stats.expert_count) * b
                                                 : b;
}

double z_loss(const RouterStats& stats) {
  if (stats.token_count < 1) throw std::invalid_argument("z_loss: needs at least one token");
  return stats.lse_sq_sum / static_cast<double>(stats.token_count);
}

double entropy_reg(const PolicyParams& params, const Batch& batch, const SelectedSet& selected) {
  if (selected.total_tokens == 0) throw std::invalid_argument("entropy_reg: empty selection");
  double sum = 0.0;
  std::vector<int> context;
  for (const SelectionEntry& entry : selected.entries) {
    const ResponseGroup& group = batch.groups[static_cast<std::size_t>(entry.group)];
    const Response& resp = group.responses[static_cast<std::size_t>(entry.response)];
    context.assign(group.prompt_tokens.begin(), group.prompt_tokens.end());
    for (int t = 0; t < entry.included_tokens; ++t) {
      const TokenForward tf = forward_detail(params, context, batch.temperature);
      sum += entropy(tf.probs);
      context.push_back(resp.token_ids[static_cast<std::size_t>(t)]);
    }
  }
  return sum / static_cast<double>(selected.total_tokens);
}

LossBreakdown total_loss(const LossBreakdown& parts, const ObjectiveConfig& cfg) {
  auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(parts.policy_term) || !finite(parts.kl_term) || !finite(parts.entropy_term) ||
      !finite(parts.balance_term) || !finite(parts.zloss_term))
    throw std::invalid_argument("total_loss: non-finite component");
  LossBreakdown out = parts;
  const double ent_sign = cfg.entropy_sign == EntropySign::kBonus ? -1.0 : 1.0;
  out.total = parts.policy_term + cfg.kl_beta * parts.kl_term +
              ent_sign * cfg.alpha_entropy * parts.entropy_term +
              cfg.alpha_balance * parts.balance_term + cfg.alpha_zloss * parts.zloss_term;
  return out;
}

LossResult evaluate_total_loss(const Batch& batch, const SelectedSet& selected, LossKind kind,
                               const PolicyParams& params, const PolicyParams& ref_params,
                               const ObjectiveConfig& cfg, bool want_grad) {
  return evaluate(batch, selected, params, ref_params, cfg, {kind, /*with_aux=*/true, want_grad});
}

}  // namespace c3po
