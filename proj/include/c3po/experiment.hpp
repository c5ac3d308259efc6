#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "c3po/curation.hpp"
#include "c3po/trainer.hpp"

namespace c3po {

/// Environment variable naming the default output root for `run`.
constexpr const char* kOutRootEnv = "C3PO_OUT_ROOT";

struct ExperimentConfig {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;  // default root; CLI --out and $C3PO_OUT_ROOT also apply
  std::string vocab_preset = "full";
  std::vector<std::string> vocab_tokens;  // explicit alternative to a preset
  std::vector<std::string> dataset_paths;
  TrainerConfig trainer;
  StagePlan stages;
};

/// Strict parse: unknown keys are fatal and named in the error. Relative
/// dataset paths resolve against `base_dir` (the config file's directory).
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& base_dir);
ExperimentConfig load_experiment_config(const std::string& path);

/// Fully resolved form; feeding it back through `run` reproduces the run.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

Vocabulary resolve_vocabulary(const ExperimentConfig& cfg);

struct SeedRunResult {
  std::uint64_t seed = 0;
  std::vector<StepMetrics> metrics;
  bool failed = false;
  std::string error;
};

/// Executes the stage plan once per seed, writing metrics CSVs, checkpoints,
/// per-seed manifests and the run manifest into out_root/<name>/.
std::vector<SeedRunResult> run_experiment(const ExperimentConfig& cfg,
                                          const std::string& out_root);

/// Output directory resolution: explicit CLI flag, then the config's
/// out_dir, then $C3PO_OUT_ROOT, then "runs".
std::string resolve_out_root(const std::optional<std::string>& cli_out,
                             const ExperimentConfig& cfg);

struct RunSummary {
  std::string dir;
  int seed_count = 0;
  std::int64_t steps = 0;
  double grad_norm_mean = 0.0;
  double grad_norm_cv = 0.0;   // seed-mean coefficient of variation
  double reward_first_mean = 0.0;  // first 10% of steps
  double reward_final_mean = 0.0;  // last 10% of steps
  double tokens_mean = 0.0;
  double tokens_variance = 0.0;
  double tokens_cv = 0.0;
  double throughput_mean = 0.0;
  double throughput_cv = 0.0;
  double underbudget_steps = 0.0;
};

RunSummary summarize_run(const std::string& run_dir);

struct CompareResult {
  RunSummary a;
  RunSummary b;
  std::string table;  // deterministic text table with deltas (b - a)
};

/// Side-by-side summary of two completed runs. Metrics headers must match.
/// Optional SVG line charts (reward, grad norm, tokens per step) land next
/// to the table when plot_dir is set.
CompareResult compare_runs(const std::string& dir_a, const std::string& dir_b,
                           const std::optional<std::string>& plot_dir = std::nullopt);

std::string report_run(const std::string& run_dir);

/// Mean reward of `params` over a problem set, sampling `samples_per_problem`
/// responses per problem. Deterministic in the seed.
double evaluate_policy_reward(const PolicyParams& params, const Vocabulary& vocab,
                              const std::vector<Problem>& problems, int samples_per_problem,
                              int max_len, double temperature, std::uint64_t seed);

// Metrics CSV reading (compare/report side).
struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws when missing
  std::vector<double> numeric_column(const std::string& name) const;
};

MetricsTable read_metrics_csv(const std::string& path);

}  // namespace c3po
