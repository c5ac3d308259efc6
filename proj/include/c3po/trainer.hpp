#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "c3po/objective.hpp"
#include "c3po/optimizer.hpp"
#include "c3po/policy.hpp"
#include "c3po/rewards.hpp"
#include "c3po/scheduler.hpp"
#include "c3po/vocab.hpp"

namespace c3po {

enum class Algorithm { kGrpo, kGrpoDynamicSampling, kC3po };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct PolicyConfig {
  int context_order = 3;
  int expert_count = 4;
  int top_k = 2;
  /// Gaussian scale of the initial weights; 0 starts from the uniform policy.
  /// Larger values start sharper (lower-entropy) policies.
  double init_scale = 0.0;
  /// Added to the end-of-sequence logit of every expert's bias row at init.
  /// Negative values start a long-winded policy (shapes length dynamics).
  double init_eos_logit = 0.0;
  bool pair_features = false;
  int head_features = 0;
};

struct TrainerConfig {
  int prompts_per_step = 512;  // L
  int group_size = 16;         // K
  int minibatch_count = 2;     // optimizer updates per step; ratio != 1 after the first
  double learning_rate = 3e-6;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_response_len = 24576;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::kC3po;
  SelectionOrder selection_order = SelectionOrder::kSeededShuffle;
  ObjectiveConfig objective;
  PolicyConfig policy;
  // Deterministic step-cost model behind the throughput and wall_time
  // metrics columns: cost = overhead + per_token * tokens trained.
  double sim_cost_overhead = 0.5;
  double sim_cost_per_token = 1e-4;
  std::int64_t reference_sft_tokens = 2048000;
  int checkpoint_every = 0;  // 0: final checkpoint only
};

struct Stage {
  std::vector<Domain> domains;
  int steps = 0;
  std::optional<int> max_response_len;
};

struct StagePlan {
  std::vector<Stage> stages;
};

struct StepMetrics {
  std::int64_t step = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double response_len_mean = 0.0;
  double response_len_p95 = 0.0;
  std::int64_t tokens_selected = 0;
  std::int64_t tokens_discarded = 0;
  bool underbudget = false;
  double grad_norm = 0.0;  // mean of per-minibatch gradient L2 norms
  double entropy_mean = 0.0;
  double kl_mean = 0.0;
  double balance_loss = 0.0;
  double z_loss = 0.0;
  double simulated_throughput = 0.0;
  double wall_time = 0.0;  // simulated step seconds (deterministic)
  std::string domain_mix;  // e.g. "math=1.000" or "code=0.500|science=0.500"
};

/// CSV with a mandatory header; one row per step, columns exactly the
/// StepMetrics fields.
std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);
void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& rows);

struct TokenLedger {
  std::int64_t cumulative_rl_tokens = 0;
  std::int64_t reference_sft_tokens = 0;
};

/// cumulative RL training tokens / reference SFT tokens.
double token_efficiency(const TokenLedger& ledger);

struct TrainerState {
  TrainerConfig cfg;
  Vocabulary vocab;
  std::vector<Problem> problems;  // all domains; stages filter
  PolicyParams params;
  PolicyParams ref_params;  // frozen anchor for the KL penalty
  AdamWState opt;
  Rng rng;  // one draw per step seeds that step's sampling streams
  TokenLedger ledger;
  std::int64_t step = 0;
  int stage_index = 0;
  std::int64_t step_in_stage = 0;

  // Diagnostics from the most recent step (not serialized).
  double last_first_minibatch_min_ratio = 1.0;
  double last_first_minibatch_max_ratio = 1.0;
};

TrainerState make_trainer_state(const TrainerConfig& cfg, const Vocabulary& vocab,
                                std::vector<Problem> problems);

/// K i.i.d. responses per problem under the frozen behavior snapshot, with
/// rewards and group-normalized advantages attached. A "target_len:<n>" tag
/// on a problem caps that problem's responses below max_len.
Batch rollout(const PolicyParams& params_old, const Vocabulary& vocab,
              const std::vector<const Problem*>& problems, int group_size,
              const TrainerConfig& cfg, int max_len, std::uint64_t seed);

/// One full step: rollout, rewards, advantages, token selection per the
/// configured algorithm, minibatched loss/gradient/update loop, metrics.
/// A failed step throws and leaves the state unchanged.
StepMetrics train_step(TrainerState& state, const std::vector<const Problem*>& problems,
                       std::optional<int> max_len_override = std::nullopt);

/// Runs `stage.steps` steps sampling uniformly without replacement per epoch
/// from the stage's domain pool. Appends one StepMetrics per step; the
/// optional callback fires after each step (checkpoint hooks live there).
std::vector<StepMetrics> run_stage(
    TrainerState& state, const Stage& stage,
    const std::function<void(const TrainerState&, const StepMetrics&)>& on_step = nullptr);

// Versioned self-describing checkpoint: weights + vocabulary + reference
// anchor + optimizer moments + rng state + ledger + step counters.
// Round-trips bit-exactly. Config and datasets live in the run manifest and
// are re-attached by the caller on load.
std::string checkpoint_to_json(const TrainerState& state);
TrainerState checkpoint_from_json(const std::string& text, const TrainerConfig& cfg,
                                  std::vector<Problem> problems);
void save_checkpoint(const std::string& path, const TrainerState& state);
TrainerState load_checkpoint(const std::string& path, const TrainerConfig& cfg,
                             std::vector<Problem> problems);

/// Vocabulary and policy weights only, for consumers that score or sample
/// without resuming training.
std::pair<Vocabulary, PolicyParams> load_checkpoint_policy(const std::string& path);

}  // namespace c3po
