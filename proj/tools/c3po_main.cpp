// Experiment runner: generate datasets, train, curate, and compare runs.
// All file formats are documented in the README.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "c3po/experiment.hpp"
#include "c3po/tasks.hpp"

namespace fs = std::filesystem;
using namespace c3po;

namespace {

int cmd_gen(const std::string& domain, int count, std::uint64_t seed, const std::string& out,
            int depth, int operand_min, int operand_max, const std::string& ops,
            std::int64_t answer_max, int test_cases, const std::string& profile, int len_min,
            int len_max, double pareto_alpha) {
  GeneratorSpec spec;
  spec.domain = domain_from_string(domain);
  spec.count = count;
  spec.seed = seed;
  spec.depth = depth;
  spec.operand_min = operand_min;
  spec.operand_max = operand_max;
  spec.ops = ops;
  spec.answer_abs_max = answer_max;
  spec.test_case_count = test_cases;
  spec.length_profile = length_profile_from_string(profile);
  spec.target_len_min = len_min;
  spec.target_len_max = len_max;
  spec.pareto_alpha = pareto_alpha;
  const std::vector<Problem> problems = generate(spec);
  save_dataset(out, problems);
  std::cout << "wrote " << problems.size() << " problems to " << out << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::optional<std::string>& out,
            const std::optional<std::string>& seeds_csv,
            const std::optional<std::string>& algorithm) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seeds_csv) {
    cfg.seeds.clear();
    std::stringstream ss(*seeds_csv);
    std::string piece;
    while (std::getline(ss, piece, ',')) cfg.seeds.push_back(std::stoull(piece));
    if (cfg.seeds.empty()) throw std::invalid_argument("--seeds: empty list");
  }
  if (algorithm) cfg.trainer.algorithm = algorithm_from_string(*algorithm);
  const std::string root = resolve_out_root(out, cfg);
  const auto results = run_experiment(cfg, root);
  int failures = 0;
  for (const SeedRunResult& r : results) {
    std::cout << "seed " << r.seed << ": " << r.metrics.size() << " steps"
              << (r.failed ? " FAILED: " + r.error : "") << "\n";
    failures += r.failed ? 1 : 0;
  }
  std::cout << "run dir: " << (fs::path(root) / cfg.name).string() << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b,
                const std::optional<std::string>& out, bool plots) {
  const std::optional<std::string> plot_dir =
      plots ? std::optional<std::string>(out.value_or(".")) : std::nullopt;
  const CompareResult res = compare_runs(dir_a, dir_b, plot_dir);
  std::cout << res.table;
  if (out) {
    fs::create_directories(*out);
    std::ofstream f(fs::path(*out) / "compare.txt");
    f << res.table;
  }
  return 0;
}

int cmd_curate(const std::string& input, const std::optional<std::string>& eval_path,
               const std::string& output, const std::optional<std::string>& checkpoint,
               int samples, int max_len, double temperature, std::uint64_t seed, int shingle_n,
               double jaccard, double keep_min, double keep_max) {
  const std::vector<Problem> problems = load_dataset(input);
  std::vector<Problem> eval_set;
  if (eval_path) eval_set = load_dataset(*eval_path);

  CuratePipelineOptions opt;
  opt.config.shingle_n = shingle_n;
  opt.config.jaccard_threshold = jaccard;
  opt.config.keep_min = keep_min;
  opt.config.keep_max = keep_max;
  opt.n_samples = samples;
  opt.max_len = max_len;
  opt.temperature = temperature;
  opt.seed = seed;

  Vocabulary vocab;
  PolicyParams params;
  if (checkpoint) {
    std::tie(vocab, params) = load_checkpoint_policy(*checkpoint);
    opt.vocab = &vocab;
    opt.params = &params;
  }

  const auto [retained, report] = curate_pipeline(problems, eval_set, opt);
  save_dataset(output, retained);
  std::cout << report.to_text();
  std::ofstream rep_txt(output + ".report.txt");
  rep_txt << report.to_text();
  std::ofstream rep_json(output + ".report.json");
  rep_json << report.to_json() << '\n';
  return 0;
}

int cmd_report(const std::string& run_dir, const std::optional<std::string>& out) {
  const std::string text = report_run(run_dir);
  std::cout << text;
  if (out) {
    std::ofstream f(*out);
    f << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-budgeted policy optimization at desk scale"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string g_domain = "math", g_out = "dataset.jsonl", g_ops = "+-*";
  std::string g_profile = "short";
  int g_count = 100, g_depth = 1, g_omin = 0, g_omax = 9, g_cases = 3;
  int g_len_min = 8, g_len_max = 512;
  std::uint64_t g_seed = 0;
  std::int64_t g_answer_max = 99;
  double g_alpha = 1.1;
  gen->add_option("--domain", g_domain, "math|code|science");
  gen->add_option("--count", g_count);
  gen->add_option("--seed", g_seed);
  gen->add_option("--out", g_out, "output dataset path");
  gen->add_option("--depth", g_depth, "operators per expression");
  gen->add_option("--operand-min", g_omin);
  gen->add_option("--operand-max", g_omax);
  gen->add_option("--ops", g_ops, "allowed operators, e.g. +-*/");
  gen->add_option("--answer-max", g_answer_max, "max |gold|");
  gen->add_option("--test-cases", g_cases, "test cases per code problem");
  gen->add_option("--profile", g_profile, "short|heavy_tailed|bimodal");
  gen->add_option("--len-min", g_len_min, "target length floor");
  gen->add_option("--len-max", g_len_max, "target length cap");
  gen->add_option("--pareto-alpha", g_alpha, "heavy tail exponent");

  // run
  auto* run = app.add_subcommand("run", "execute an experiment config");
  std::string r_config;
  std::optional<std::string> r_out, r_seeds, r_algorithm;
  run->add_option("--config", r_config, "experiment config (json)")->required();
  run->add_option("--out", r_out, "output root (overrides config and env)");
  run->add_option("--seeds", r_seeds, "comma-separated seed override");
  run->add_option("--algorithm", r_algorithm, "grpo|grpo_dynamic_sampling|c3po");

  // compare
  auto* cmp = app.add_subcommand("compare", "compare two completed runs");
  std::string c_a, c_b;
  std::optional<std::string> c_out;
  bool c_plots = false;
  cmp->add_option("run_a", c_a, "first run directory")->required();
  cmp->add_option("run_b", c_b, "second run directory")->required();
  cmp->add_option("--out", c_out, "directory for compare.txt and plots");
  cmp->add_flag("--plots", c_plots, "emit SVG line charts");

  // curate
  auto* cur = app.add_subcommand("curate", "run the data curation pipeline");
  std::string u_input, u_output;
  std::optional<std::string> u_eval, u_ckpt;
  int u_samples = 32, u_max_len = 64, u_shingle = 8;
  double u_temp = 1.0, u_jaccard = 0.8, u_keep_min = 0.0, u_keep_max = 1.0;
  std::uint64_t u_seed = 0;
  cur->add_option("--input", u_input, "input dataset")->required();
  cur->add_option("--eval-set", u_eval, "decontamination reference dataset");
  cur->add_option("--output", u_output, "retained dataset path")->required();
  cur->add_option("--checkpoint", u_ckpt, "policy checkpoint enabling the pass-rate stage");
  cur->add_option("--samples", u_samples, "samples per problem for pass rate");
  cur->add_option("--max-len", u_max_len);
  cur->add_option("--temperature", u_temp);
  cur->add_option("--seed", u_seed);
  cur->add_option("--shingle-n", u_shingle);
  cur->add_option("--jaccard", u_jaccard, "duplicate threshold");
  cur->add_option("--keep-min", u_keep_min, "exclusive pass-rate floor");
  cur->add_option("--keep-max", u_keep_max, "exclusive pass-rate ceiling");

  // report
  auto* rep = app.add_subcommand("report", "summarize one run directory");
  std::string p_run;
  std::optional<std::string> p_out;
  rep->add_option("run_dir", p_run, "run directory")->required();
  rep->add_option("--out", p_out, "write the report here as well");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen(g_domain, g_count, g_seed, g_out, g_depth, g_omin, g_omax, g_ops,
                     g_answer_max, g_cases, g_profile, g_len_min, g_len_max, g_alpha);
    if (run->parsed()) return cmd_run(r_config, r_out, r_seeds, r_algorithm);
    if (cmp->parsed()) return cmd_compare(c_a, c_b, c_out, c_plots);
    if (cur->parsed())
      return cmd_curate(u_input, u_eval, u_output, u_ckpt, u_samples, u_max_len, u_temp, u_seed,
                        u_shingle, u_jaccard, u_keep_min, u_keep_max);
    if (rep->parsed()) return cmd_report(p_run, p_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
