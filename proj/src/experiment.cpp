#include "c3po/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "c3po/format.hpp"

namespace fs = std::filesystem;

namespace c3po {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& context, const std::string& message) {
  throw std::invalid_argument("config: " + context + ": " + message);
}

void expect_keys(const json& j, const std::string& context,
                 std::initializer_list<const char*> keys) {
  if (!j.is_object()) config_error(context, "expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) config_error(context, "unknown key '" + key + "'");
  }
}

template <typename T>
void read_field(const json& j, const std::string& context, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(context + "." + key, e.what());
  }
}

std::string advantage_mode_name(AdvantageStdMode m) {
  return m == AdvantageStdMode::kPopulation ? "population" : "sample";
}
AdvantageStdMode advantage_mode_parse(const std::string& s, const std::string& ctx) {
  if (s == "population") return AdvantageStdMode::kPopulation;
  if (s == "sample") return AdvantageStdMode::kSample;
  config_error(ctx, "unknown advantage_std_mode '" + s + "'");
}

std::string degenerate_mode_name(DegenerateGroupMode m) {
  return m == DegenerateGroupMode::kZeroAdvantage ? "zero_advantage" : "drop_group";
}
DegenerateGroupMode degenerate_mode_parse(const std::string& s, const std::string& ctx) {
  if (s == "zero_advantage") return DegenerateGroupMode::kZeroAdvantage;
  if (s == "drop_group") return DegenerateGroupMode::kDropGroup;
  config_error(ctx, "unknown degenerate_group_mode '" + s + "'");
}

std::string entropy_sign_name(EntropySign s) {
  return s == EntropySign::kBonus ? "bonus" : "penalty";
}
EntropySign entropy_sign_parse(const std::string& s, const std::string& ctx) {
  if (s == "bonus") return EntropySign::kBonus;
  if (s == "penalty") return EntropySign::kPenalty;
  config_error(ctx, "unknown entropy_sign '" + s + "'");
}

std::string balance_variant_name(BalanceVariant v) {
  return v == BalanceVariant::kAsPrinted ? "as_printed" : "switch_style";
}
BalanceVariant balance_variant_parse(const std::string& s, const std::string& ctx) {
  if (s == "as_printed") return BalanceVariant::kAsPrinted;
  if (s == "switch_style") return BalanceVariant::kSwitchStyle;
  config_error(ctx, "unknown balance_variant '" + s + "'");
}

std::string selection_order_name(SelectionOrder o) {
  return o == SelectionOrder::kNatural ? "natural" : "seeded_shuffle";
}
SelectionOrder selection_order_parse(const std::string& s, const std::string& ctx) {
  if (s == "natural") return SelectionOrder::kNatural;
  if (s == "seeded_shuffle") return SelectionOrder::kSeededShuffle;
  config_error(ctx, "unknown selection_order '" + s + "'");
}

ObjectiveConfig parse_objective(const json& j, const std::string& ctx) {
  expect_keys(j, ctx,
              {"clip_eps", "kl_beta", "alpha_entropy", "alpha_balance", "alpha_zloss",
               "token_budget", "advantage_std_mode", "degenerate_group_mode", "entropy_sign",
               "balance_variant"});
  ObjectiveConfig o;
  read_field(j, ctx, "clip_eps", o.clip_eps);
  read_field(j, ctx, "kl_beta", o.kl_beta);
  read_field(j, ctx, "alpha_entropy", o.alpha_entropy);
  read_field(j, ctx, "alpha_balance", o.alpha_balance);
  read_field(j, ctx, "alpha_zloss", o.alpha_zloss);
  read_field(j, ctx, "token_budget", o.token_budget);
  if (j.contains("advantage_std_mode"))
    o.advantage_std_mode =
        advantage_mode_parse(j.at("advantage_std_mode").get<std::string>(), ctx);
  if (j.contains("degenerate_group_mode"))
    o.degenerate_group_mode =
        degenerate_mode_parse(j.at("degenerate_group_mode").get<std::string>(), ctx);
  if (j.contains("entropy_sign"))
    o.entropy_sign = entropy_sign_parse(j.at("entropy_sign").get<std::string>(), ctx);
  if (j.contains("balance_variant"))
    o.balance_variant = balance_variant_parse(j.at("balance_variant").get<std::string>(), ctx);
  if (!(o.clip_eps > 0.0)) config_error(ctx + ".clip_eps", "must be > 0");
  if (o.token_budget < 1) config_error(ctx + ".token_budget", "must be >= 1");
  if (o.alpha_entropy < 0.0 || o.alpha_balance < 0.0 || o.alpha_zloss < 0.0)
    config_error(ctx, "loss coefficients must be >= 0");
  return o;
}

json objective_to_json(const ObjectiveConfig& o) {
  json j;
  j["clip_eps"] = o.clip_eps;
  j["kl_beta"] = o.kl_beta;
  j["alpha_entropy"] = o.alpha_entropy;
  j["alpha_balance"] = o.alpha_balance;
  j["alpha_zloss"] = o.alpha_zloss;
  j["token_budget"] = o.token_budget;
  j["advantage_std_mode"] = advantage_mode_name(o.advantage_std_mode);
  j["degenerate_group_mode"] = degenerate_mode_name(o.degenerate_group_mode);
  j["entropy_sign"] = entropy_sign_name(o.entropy_sign);
  j["balance_variant"] = balance_variant_name(o.balance_variant);
  return j;
}

PolicyConfig parse_policy(const json& j, const std::string& ctx) {
  expect_keys(j, ctx,
              {"context_order", "expert_count", "top_k", "init_scale", "init_eos_logit",
               "pair_features", "head_features"});
  PolicyConfig p;
  read_field(j, ctx, "context_order", p.context_order);
  read_field(j, ctx, "expert_count", p.expert_count);
  read_field(j, ctx, "top_k", p.top_k);
  read_field(j, ctx, "init_scale", p.init_scale);
  read_field(j, ctx, "init_eos_logit", p.init_eos_logit);
  read_field(j, ctx, "pair_features", p.pair_features);
  read_field(j, ctx, "head_features", p.head_features);
  return p;
}

json policy_to_json(const PolicyConfig& p) {
  return {{"context_order", p.context_order},
          {"expert_count", p.expert_count},
          {"top_k", p.top_k},
          {"init_scale", p.init_scale},
          {"init_eos_logit", p.init_eos_logit},
          {"pair_features", p.pair_features},
          {"head_features", p.head_features}};
}

TrainerConfig parse_trainer(const json& j, const std::string& ctx) {
  expect_keys(j, ctx,
              {"prompts_per_step", "group_size", "minibatch_count", "learning_rate",
               "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "max_response_len",
               "temperature", "algorithm", "selection_order", "objective", "policy",
               "sim_cost_overhead", "sim_cost_per_token", "reference_sft_tokens",
               "checkpoint_every"});
  TrainerConfig t;
  read_field(j, ctx, "prompts_per_step", t.prompts_per_step);
  read_field(j, ctx, "group_size", t.group_size);
  read_field(j, ctx, "minibatch_count", t.minibatch_count);
  read_field(j, ctx, "learning_rate", t.learning_rate);
  read_field(j, ctx, "weight_decay", t.weight_decay);
  read_field(j, ctx, "adam_beta1", t.adam_beta1);
  read_field(j, ctx, "adam_beta2", t.adam_beta2);
  read_field(j, ctx, "adam_eps", t.adam_eps);
  read_field(j, ctx, "max_response_len", t.max_response_len);
  read_field(j, ctx, "temperature", t.temperature);
  if (j.contains("algorithm")) t.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  if (j.contains("selection_order"))
    t.selection_order = selection_order_parse(j.at("selection_order").get<std::string>(), ctx);
  if (j.contains("objective")) t.objective = parse_objective(j.at("objective"), ctx + ".objective");
  if (j.contains("policy")) t.policy = parse_policy(j.at("policy"), ctx + ".policy");
  read_field(j, ctx, "sim_cost_overhead", t.sim_cost_overhead);
  read_field(j, ctx, "sim_cost_per_token", t.sim_cost_per_token);
  read_field(j, ctx, "reference_sft_tokens", t.reference_sft_tokens);
  read_field(j, ctx, "checkpoint_every", t.checkpoint_every);
  return t;
}

json trainer_to_json(const TrainerConfig& t) {
  json j;
  j["prompts_per_step"] = t.prompts_per_step;
  j["group_size"] = t.group_size;
  j["minibatch_count"] = t.minibatch_count;
  j["learning_rate"] = t.learning_rate;
  j["weight_decay"] = t.weight_decay;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["max_response_len"] = t.max_response_len;
  j["temperature"] = t.temperature;
  j["algorithm"] = to_string(t.algorithm);
  j["selection_order"] = selection_order_name(t.selection_order);
  j["objective"] = objective_to_json(t.objective);
  j["policy"] = policy_to_json(t.policy);
  j["sim_cost_overhead"] = t.sim_cost_overhead;
  j["sim_cost_per_token"] = t.sim_cost_per_token;
  j["reference_sft_tokens"] = t.reference_sft_tokens;
  j["checkpoint_every"] = t.checkpoint_every;
  return j;
}

StagePlan parse_stages(const json& j, const std::string& ctx, const std::string& base_dir) {
  (void)base_dir;
  if (!j.is_array() || j.empty()) config_error(ctx, "need at least one stage");
  StagePlan plan;
  int idx = 0;
  for (const json& sj : j) {
    const std::string sctx = ctx + "[" + std::to_string(idx++) + "]";
    expect_keys(sj, sctx, {"domains", "steps", "max_response_len"});
    Stage s;
    if (!sj.contains("domains") || !sj.at("domains").is_array() || sj.at("domains").empty())
      config_error(sctx, "domains must be a nonempty array");
    for (const json& d : sj.at("domains")) s.domains.push_back(domain_from_string(d.get<std::string>()));
    if (!sj.contains("steps")) config_error(sctx, "missing steps");
    s.steps = sj.at("steps").get<int>();
    if (s.steps < 1) config_error(sctx + ".steps", "must be >= 1");
    if (sj.contains("max_response_len")) s.max_response_len = sj.at("max_response_len").get<int>();
    plan.stages.push_back(std::move(s));
  }
  return plan;
}

bool filesystem_safe(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      return false;
  return true;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  expect_keys(j, "$", {"name", "seeds", "out_dir", "vocab", "datasets", "trainer", "stages"});

  ExperimentConfig cfg;
  if (!j.contains("name")) config_error("$", "missing name");
  cfg.name = j.at("name").get<std::string>();
  if (!filesystem_safe(cfg.name)) config_error("$.name", "must be filesystem-safe");

  if (!j.contains("seeds") || !j.at("seeds").is_array() || j.at("seeds").empty())
    config_error("$.seeds", "need a nonempty seed list");
  for (const json& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());

  read_field(j, "$", "out_dir", cfg.out_dir);

  if (j.contains("vocab")) {
    const json& v = j.at("vocab");
    expect_keys(v, "$.vocab", {"preset", "tokens"});
    if (v.contains("preset") && v.contains("tokens"))
      config_error("$.vocab", "give either a preset or explicit tokens, not both");
    if (v.contains("preset")) cfg.vocab_preset = v.at("preset").get<std::string>();
    if (v.contains("tokens")) {
      cfg.vocab_tokens = v.at("tokens").get<std::vector<std::string>>();
      cfg.vocab_preset.clear();
    }
  }

  if (j.contains("datasets")) {
    for (const json& d : j.at("datasets")) {
      fs::path p = d.get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
      cfg.dataset_paths.push_back(p.lexically_normal().string());
    }
  }

  if (j.contains("trainer")) cfg.trainer = parse_trainer(j.at("trainer"), "$.trainer");
  if (!j.contains("stages")) config_error("$", "missing stages");
  cfg.stages = parse_stages(j.at("stages"), "$.stages", base_dir);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), fs::path(path).parent_path().string());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  if (!cfg.vocab_tokens.empty())
    j["vocab"] = {{"tokens", cfg.vocab_tokens}};
  else
    j["vocab"] = {{"preset", cfg.vocab_preset}};
  j["datasets"] = cfg.dataset_paths;
  j["trainer"] = trainer_to_json(cfg.trainer);
  json stages = json::array();
  for (const Stage& s : cfg.stages.stages) {
    json sj;
    json domains = json::array();
    for (Domain d : s.domains) domains.push_back(to_string(d));
    sj["domains"] = std::move(domains);
    sj["steps"] = s.steps;
    if (s.max_response_len) sj["max_response_len"] = *s.max_response_len;
    stages.push_back(std::move(sj));
  }
  j["stages"] = std::move(stages);
  return j.dump(2);
}

Vocabulary resolve_vocabulary(const ExperimentConfig& cfg) {
  if (!cfg.vocab_tokens.empty()) return Vocabulary(cfg.vocab_tokens);
  return Vocabulary::preset(cfg.vocab_preset);
}

std::string resolve_out_root(const std::optional<std::string>& cli_out,
                             const ExperimentConfig& cfg) {
  if (cli_out && !cli_out->empty()) return *cli_out;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv(kOutRootEnv); env != nullptr && *env != '\0') return env;
  return "runs";
}

std::vector<SeedRunResult> run_experiment(const ExperimentConfig& cfg,
                                          const std::string& out_root) {
  const fs::path dir = fs::path(out_root) / cfg.name;
  fs::create_directories(dir);
  {
    std::ofstream m(dir / "manifest.json");
    m << experiment_config_to_json(cfg) << '\n';
  }

  const Vocabulary vocab = resolve_vocabulary(cfg);
  std::vector<Problem> problems;
  for (const std::string& path : cfg.dataset_paths) {
    const std::vector<Problem> part = load_dataset(path);
    problems.insert(problems.end(), part.begin(), part.end());
  }

  std::vector<SeedRunResult> results;
  for (const std::uint64_t seed : cfg.seeds) {
    SeedRunResult res;
    res.seed = seed;
    ExperimentConfig seed_cfg = cfg;
    seed_cfg.seeds = {seed};
    seed_cfg.trainer.seed = seed;
    const std::string tag = "seed" + std::to_string(seed);
    {
      std::ofstream m(dir / ("manifest_" + tag + ".json"));
      m << experiment_config_to_json(seed_cfg) << '\n';
    }
    try {
      TrainerState st = make_trainer_state(seed_cfg.trainer, vocab, problems);
      // metrics collect per step so a mid-stage failure still leaves them
      auto on_step = [&](const TrainerState& state, const StepMetrics& m) {
        res.metrics.push_back(m);
        if (cfg.trainer.checkpoint_every > 0 &&
            state.step % cfg.trainer.checkpoint_every == 0)
          save_checkpoint((dir / ("checkpoint_" + tag + "_step" +
                                  std::to_string(state.step) + ".json"))
                              .string(),
                          state);
      };
      for (const Stage& stage : cfg.stages.stages) run_stage(st, stage, on_step);
      write_metrics_csv((dir / ("metrics_" + tag + ".csv")).string(), res.metrics);
      save_checkpoint((dir / ("checkpoint_" + tag + ".json")).string(), st);
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
      write_metrics_csv((dir / ("metrics_" + tag + ".csv")).string(), res.metrics);
      std::ofstream marker(dir / ("failure_" + tag + ".marker"));
      marker << e.what() << '\n';
    }
    results.push_back(std::move(res));
  }
  return results;
}

std::size_t MetricsTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::runtime_error("metrics: missing column '" + name + "'");
}

std::vector<double> MetricsTable::numeric_column(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back(std::stod(row.at(c)));
  return out;
}

MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path);
  MetricsTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw std::runtime_error("metrics file has no header: " + path);
  return t;
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

double cv_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  if (m == 0.0) return 0.0;
  return std::sqrt(variance_of(v)) / std::abs(m);
}

std::vector<double> window_mean(const std::vector<double>& v, bool head) {
  if (v.empty()) return {};
  const std::size_t w = std::max<std::size_t>(1, v.size() / 10);
  if (head) return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(w)};
  return {v.end() - static_cast<std::ptrdiff_t>(w), v.end()};
}

std::vector<fs::path> metrics_files(const std::string& run_dir) {
  if (!fs::exists(run_dir)) throw std::runtime_error("run directory not found: " + run_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_seed", 0) == 0 && entry.path().extension() == ".csv")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no metrics files in " + run_dir);
  return files;
}

double zero_normal(double x) { return x == 0.0 ? 0.0 : x; }

}  // namespace

RunSummary summarize_run(const std::string& run_dir) {
  RunSummary s;
  s.dir = run_dir;
  std::vector<double> grad_means, grad_cvs, first_rewards, final_rewards;
  std::vector<double> tok_means, tok_vars, tok_cvs, thr_means, thr_cvs, underbudget_counts;
  std::vector<std::string> header;
  for (const fs::path& file : metrics_files(run_dir)) {
    const MetricsTable t = read_metrics_csv(file.string());
    if (header.empty()) header = t.header;
    else if (header != t.header)
      throw std::runtime_error("metrics column mismatch inside " + run_dir);
    const auto grad = t.numeric_column("grad_norm");
    const auto reward = t.numeric_column("reward_mean");
    const auto tokens = t.numeric_column("tokens_selected");
    const auto thr = t.numeric_column("simulated_throughput");
    const auto under = t.numeric_column("underbudget");
    s.steps = static_cast<std::int64_t>(grad.size());
    grad_means.push_back(mean_of(grad));
    grad_cvs.push_back(cv_of(grad));
    first_rewards.push_back(mean_of(window_mean(reward, true)));
    final_rewards.push_back(mean_of(window_mean(reward, false)));
    tok_means.push_back(mean_of(tokens));
    tok_vars.push_back(variance_of(tokens));
    tok_cvs.push_back(cv_of(tokens));
    thr_means.push_back(mean_of(thr));
    thr_cvs.push_back(cv_of(thr));
    underbudget_counts.push_back(mean_of(under) * static_cast<double>(under.size()));
    s.seed_count += 1;
  }
  s.grad_norm_mean = mean_of(grad_means);
  s.grad_norm_cv = mean_of(grad_cvs);
  s.reward_first_mean = mean_of(first_rewards);
  s.reward_final_mean = mean_of(final_rewards);
  s.tokens_mean = mean_of(tok_means);
  s.tokens_variance = mean_of(tok_vars);
  s.tokens_cv = mean_of(tok_cvs);
  s.throughput_mean = mean_of(thr_means);
  s.throughput_cv = mean_of(thr_cvs);
  s.underbudget_steps = mean_of(underbudget_counts);
  return s;
}

namespace {

void check_headers_match(const std::string& dir_a, const std::string& dir_b) {
  const MetricsTable a = read_metrics_csv(metrics_files(dir_a).front().string());
  const MetricsTable b = read_metrics_csv(metrics_files(dir_b).front().string());
  if (a.header != b.header)
    throw std::runtime_error("compare: metrics columns differ between " + dir_a + " and " +
                             dir_b);
}

std::string table_row(const std::string& name, double a, double b) {
  std::ostringstream os;
  os << "  " << name;
  for (std::size_t i = name.size(); i < 24; ++i) os << ' ';
  const std::string sa = fmt_fixed(zero_normal(a), 6);
  const std::string sb = fmt_fixed(zero_normal(b), 6);
  const std::string sd = fmt_fixed(zero_normal(b - a), 6);
  os << sa;
  for (std::size_t i = sa.size(); i < 16; ++i) os << ' ';
  os << sb;
  for (std::size_t i = sb.size(); i < 16; ++i) os << ' ';
  os << sd << '\n';
  return os.str();
}

/// Minimal SVG polyline chart of one metrics column, mean across seeds, for
/// both runs.
void write_svg_chart(const fs::path& path, const std::string& column,
                     const std::vector<double>& a, const std::vector<double>& b) {
  const int width = 640, height = 360, margin = 40;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* series : {&a, &b})
    for (double v : *series) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  const auto x_of = [&](std::size_t i, std::size_t n) {
    return margin + (width - 2.0 * margin) * (n <= 1 ? 0.0 : static_cast<double>(i) / (n - 1));
  };
  const auto y_of = [&](double v) {
    return height - margin - (height - 2.0 * margin) * (v - lo) / (hi - lo);
  };
  auto polyline = [&](const std::vector<double>& s, const char* color) {
    std::string pts;
    for (std::size_t i = 0; i < s.size(); ++i)
      pts += fmt_fixed(x_of(i, s.size()), 1) + "," + fmt_fixed(y_of(s[i]), 1) + " ";
    return "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  };
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"20\" font-size=\"13\">" << column
      << " (blue: run A, orange: run B)</text>\n";
  out << polyline(a, "#3366cc") << polyline(b, "#ee8833");
  out << "</svg>\n";
}

std::vector<double> mean_series(const std::string& run_dir, const std::string& column) {
  std::vector<std::vector<double>> per_seed;
  for (const fs::path& file : metrics_files(run_dir))
    per_seed.push_back(read_metrics_csv(file.string()).numeric_column(column));
  std::size_t n = 0;
  for (const auto& s : per_seed) n = std::max(n, s.size());
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    int count = 0;
    for (const auto& s : per_seed)
      if (i < s.size()) {
        sum += s[i];
        ++count;
      }
    out.push_back(count ? sum / count : 0.0);
  }
  return out;
}

}  // namespace

CompareResult compare_runs(const std::string& dir_a, const std::string& dir_b,
                           const std::optional<std::string>& plot_dir) {
  check_headers_match(dir_a, dir_b);
  CompareResult res;
  res.a = summarize_run(dir_a);
  res.b = summarize_run(dir_b);

  std::ostringstream os;
  os << "run comparison\n";
  os << "  A: " << dir_a << " (" << res.a.seed_count << " seeds, " << res.a.steps << " steps)\n";
  os << "  B: " << dir_b << " (" << res.b.seed_count << " seeds, " << res.b.steps << " steps)\n";
  os << "  metric                  A               B               delta(B-A)\n";
  os << table_row("grad_norm_mean", res.a.grad_norm_mean, res.b.grad_norm_mean);
  os << table_row("grad_norm_cv", res.a.grad_norm_cv, res.b.grad_norm_cv);
  os << table_row("reward_first_mean", res.a.reward_first_mean, res.b.reward_first_mean);
  os << table_row("reward_final_mean", res.a.reward_final_mean, res.b.reward_final_mean);
  os << table_row("tokens_mean", res.a.tokens_mean, res.b.tokens_mean);
  os << table_row("tokens_variance", res.a.tokens_variance, res.b.tokens_variance);
  os << table_row("tokens_cv", res.a.tokens_cv, res.b.tokens_cv);
  os << table_row("throughput_mean", res.a.throughput_mean, res.b.throughput_mean);
  os << table_row("throughput_cv", res.a.throughput_cv, res.b.throughput_cv);
  os << table_row("underbudget_steps", res.a.underbudget_steps, res.b.underbudget_steps);
  res.table = os.str();

  if (plot_dir) {
    fs::create_directories(*plot_dir);
    for (const char* column : {"reward_mean", "grad_norm", "tokens_selected"})
      write_svg_chart(fs::path(*plot_dir) / (std::string("compare_") + column + ".svg"), column,
                      mean_series(dir_a, column), mean_series(dir_b, column));
  }
  return res;
}

std::string report_run(const std::string& run_dir) {
  const RunSummary s = summarize_run(run_dir);
  std::ostringstream os;
  os << "run report: " << run_dir << "\n";
  os << "  seeds: " << s.seed_count << ", steps: " << s.steps << "\n";
  os << "  grad_norm mean/cv:    " << fmt_fixed(s.grad_norm_mean, 6) << " / "
     << fmt_fixed(s.grad_norm_cv, 6) << "\n";
  os << "  reward first->final:  " << fmt_fixed(s.reward_first_mean, 6) << " -> "
     << fmt_fixed(s.reward_final_mean, 6) << "\n";
  os << "  tokens mean/var/cv:   " << fmt_fixed(s.tokens_mean, 3) << " / "
     << fmt_fixed(s.tokens_variance, 3) << " / " << fmt_fixed(s.tokens_cv, 6) << "\n";
  os << "  throughput mean/cv:   " << fmt_fixed(s.throughput_mean, 3) << " / "
     << fmt_fixed(s.throughput_cv, 6) << "\n";
  os << "  underbudget steps:    " << fmt_fixed(s.underbudget_steps, 1) << "\n";
  return os.str();
}

double evaluate_policy_reward(const PolicyParams& params, const Vocabulary& vocab,
                              const std::vector<Problem>& problems, int samples_per_problem,
                              int max_len, double temperature, std::uint64_t seed) {
  if (problems.empty()) throw std::invalid_argument("evaluate_policy_reward: no problems");
  double total = 0.0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const std::vector<int> prompt = vocab.tokenize(problems[i].prompt);
    for (int k = 0; k < samples_per_problem; ++k) {
      const Response r =
          sample_response(params, vocab, prompt, max_len, temperature,
                          sub_seed(seed, i, static_cast<std::uint64_t>(k), 0xE7A1));
      total += reward(vocab.render(r.token_ids), problems[i]);
    }
  }
  return total / (static_cast<double>(problems.size()) * samples_per_problem);
}

}  // namespace c3po
