#include "c3po/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "c3po/format.hpp"
#include "c3po/numerics.hpp"

namespace c3po {

using nlohmann::json;

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kGrpo: return "grpo";
    case Algorithm::kGrpoDynamicSampling: return "grpo_dynamic_sampling";
    case Algorithm::kC3po: return "c3po";
  }
  throw std::logic_error("to_string: bad Algorithm");
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "grpo") return Algorithm::kGrpo;
  if (s == "grpo_dynamic_sampling") return Algorithm::kGrpoDynamicSampling;
  if (s == "c3po") return Algorithm::kC3po;
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

double token_efficiency(const TokenLedger& ledger) {
  if (ledger.reference_sft_tokens <= 0)
    throw std::invalid_argument("token_efficiency: reference_sft_tokens must be positive");
  return static_cast<double>(ledger.cumulative_rl_tokens) /
         static_cast<double>(ledger.reference_sft_tokens);
}

TrainerState make_trainer_state(const TrainerConfig& cfg, const Vocabulary& vocab,
                                std::vector<Problem> problems) {
  if (cfg.prompts_per_step < 1) throw std::invalid_argument("TrainerConfig: prompts_per_step must be >= 1");
  if (cfg.group_size < 2) throw std::invalid_argument("TrainerConfig: group_size must be >= 2");
  if (cfg.minibatch_count < 1) throw std::invalid_argument("TrainerConfig: minibatch_count must be >= 1");
  TrainerState st;
  st.cfg = cfg;
  st.vocab = vocab;
  st.problems = std::move(problems);
  Rng init_rng(sub_seed(cfg.seed, 0x1217));
  st.params = PolicyParams::random(vocab.size(), cfg.policy.context_order,
                                   cfg.policy.expert_count, cfg.policy.top_k,
                                   cfg.policy.init_scale, init_rng, cfg.policy.pair_features,
                                   cfg.policy.head_features);
  if (cfg.policy.init_eos_logit != 0.0) {
    const int bias = st.params.feature_dim() - 1;
    for (Mat& w : st.params.experts) w(bias, vocab.eos_id()) += cfg.policy.init_eos_logit;
  }
  st.ref_params = st.params;
  st.opt = AdamWState::zeros_like(st.params);
  st.rng = Rng(sub_seed(cfg.seed, 0x5eed));
  st.ledger.reference_sft_tokens = cfg.reference_sft_tokens;
  return st;
}

namespace {

int effective_max_len(const Problem& problem, int max_len) {
  if (auto hint = problem.tag_value("target_len")) {
    try {
      const int cap = std::stoi(*hint);
      if (cap >= 1) return std::min(max_len, cap);
    } catch (const std::exception&) {
      // malformed hint: ignore, full max_len applies
    }
  }
  return max_len;
}

}  // namespace

Batch rollout(const PolicyParams& params_old, const Vocabulary& vocab,
              const std::vector<const Problem*>& problems, int group_size,
              const TrainerConfig& cfg, int max_len, std::uint64_t seed) {
  Batch batch;
  batch.group_size = group_size;
  batch.behavior_params_version = params_old.version;
  batch.temperature = cfg.temperature == 0.0 ? 1.0 : cfg.temperature;
  batch.groups.reserve(problems.size());
  for (std::size_t l = 0; l < problems.size(); ++l) {
    const Problem& problem = *problems[l];
    ResponseGroup group;
    group.problem_id = problem.id;
    group.domain = problem.domain;
    group.prompt_tokens = vocab.tokenize(problem.prompt);
    const int cap = effective_max_len(problem, max_len);
    std::vector<double> rewards;
    rewards.reserve(static_cast<std::size_t>(group_size));
    for (int k = 0; k < group_size; ++k) {
      Response r = sample_response(params_old, vocab, group.prompt_tokens, cap, cfg.temperature,
                                   sub_seed(seed, l, static_cast<std::uint64_t>(k)));
      r.prompt_id = problem.id;
      r.reward = reward(vocab.render(r.token_ids), problem);
      rewards.push_back(r.reward);
      group.responses.push_back(std::move(r));
    }
    const std::vector<double> adv = group_advantages(rewards, cfg.objective);
    for (int k = 0; k < group_size; ++k)
      group.responses[static_cast<std::size_t>(k)].advantage = adv[static_cast<std::size_t>(k)];
    batch.groups.push_back(std::move(group));
  }
  return batch;
}

namespace {

// Contiguous entry-granularity split of the selection, balanced by token
// count. Shards are nonempty; fewer than `parts` come back when the
// selection is small.
std::vector<SelectedSet> split_selection(const SelectedSet& sel, int parts) {
  std::vector<SelectedSet> shards;
  if (sel.entries.empty() || sel.total_tokens == 0) return shards;
  const std::int64_t target = (sel.total_tokens + parts - 1) / parts;
  SelectedSet cur;
  for (const SelectionEntry& e : sel.entries) {
    cur.entries.push_back(e);
    cur.total_tokens += e.included_tokens;
    if (cur.total_tokens >= target && static_cast<int>(shards.size()) < parts - 1) {
      shards.push_back(std::move(cur));
      cur = SelectedSet{};
    }
  }
  if (!cur.entries.empty()) shards.push_back(std::move(cur));
  return shards;
}

// Contiguous group split for the unbudgeted path; each shard is evaluated as
// its own sub-batch so the per-group normalization stays homogeneous.
std::vector<Batch> split_groups(const Batch& batch, int parts) {
  std::vector<Batch> shards;
  const int n = batch.prompt_count();
  if (n == 0) return shards;
  const int used = std::min(parts, n);
  int begin = 0;
  for (int s = 0; s < used; ++s) {
    const int count = n / used + (s < n % used ? 1 : 0);
    Batch shard;
    shard.group_size = batch.group_size;
    shard.behavior_params_version = batch.behavior_params_version;
    shard.temperature = batch.temperature;
    shard.groups.assign(batch.groups.begin() + begin, batch.groups.begin() + begin + count);
    begin += count;
    shards.push_back(std::move(shard));
  }
  return shards;
}

double percentile95(std::vector<int> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(values.size())));
  return static_cast<double>(values[std::min(values.size() - 1, rank == 0 ? 0 : rank - 1)]);
}

std::string domain_mix_string(const std::vector<const Problem*>& problems) {
  int counts[3] = {0, 0, 0};
  for (const Problem* p : problems) counts[static_cast<int>(p->domain)] += 1;
  const double total = static_cast<double>(problems.size());
  // sorted by domain name: code, math, science
  const std::pair<const char*, int> named[3] = {
      {"code", counts[static_cast<int>(Domain::kCode)]},
      {"math", counts[static_cast<int>(Domain::kMath)]},
      {"science", counts[static_cast<int>(Domain::kScience)]}};
  std::string out;
  for (const auto& [name, count] : named) {
    if (count == 0) continue;
    if (!out.empty()) out += '|';
    out += name;
    out += '=';
    out += fmt_fixed(static_cast<double>(count) / total, 3);
  }
  return out;
}

}  // namespace

StepMetrics train_step(TrainerState& state, const std::vector<const Problem*>& problems,
                       std::optional<int> max_len_override) {
  const TrainerConfig& cfg = state.cfg;
  if (problems.empty()) throw std::invalid_argument("train_step: no problems");

  // Working copies; the state commits only when the whole step succeeded.
  Rng rng_next = state.rng;
  const std::uint64_t step_entropy = rng_next.next_u64();
  const int max_len = max_len_override.value_or(cfg.max_response_len);

  const Batch batch = rollout(state.params, state.vocab, problems, cfg.group_size, cfg, max_len,
                              sub_seed(step_entropy, 1));

  StepMetrics m;
  m.step = state.step;
  m.domain_mix = domain_mix_string(problems);
  {
    double sum = 0.0, sq = 0.0;
    std::int64_t len_sum = 0;
    std::vector<int> lens;
    for (const ResponseGroup& g : batch.groups)
      for (const Response& r : g.responses) {
        sum += r.reward;
        sq += r.reward * r.reward;
        len_sum += r.length();
        lens.push_back(r.length());
      }
    const double n = static_cast<double>(lens.size());
    m.reward_mean = sum / n;
    m.reward_std = std::sqrt(std::max(0.0, sq / n - m.reward_mean * m.reward_mean));
    m.response_len_mean = static_cast<double>(len_sum) / n;
    m.response_len_p95 = percentile95(std::move(lens));
  }

  Batch filtered;
  const Batch* eval = &batch;
  const bool drop_degenerate =
      cfg.algorithm == Algorithm::kGrpoDynamicSampling ||
      cfg.objective.degenerate_group_mode == DegenerateGroupMode::kDropGroup;
  if (drop_degenerate) {
    filtered = dynamic_sampling_filter(batch);
    eval = &filtered;
  }

  const bool budgeted = cfg.algorithm == Algorithm::kC3po;
  SelectedSet selection;
  if (eval->prompt_count() > 0) {
    selection = budgeted ? select_budget(*eval, cfg.objective.token_budget, cfg.selection_order,
                                         sub_seed(step_entropy, 2))
                         : select_all(*eval);
  }
  m.tokens_selected = selection.total_tokens;
  m.tokens_discarded = batch.total_tokens() - selection.total_tokens;
  m.underbudget = budgeted && selection.underbudget;

  PolicyParams params = state.params;
  AdamWState opt = state.opt;
  const AdamWConfig adam{cfg.learning_rate, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2,
                         cfg.adam_eps};
  const LossKind kind = budgeted ? LossKind::kC3po : LossKind::kGrpo;

  double grad_norm_sum = 0.0;
  double ent_sum = 0.0, kl_sum = 0.0, bal_sum = 0.0, z_sum = 0.0;
  std::int64_t token_sum = 0;
  int shard_count = 0;
  auto run_shard = [&](const Batch& shard_batch, const SelectedSet& shard_sel) {
    const LossResult res =
        evaluate_total_loss(shard_batch, shard_sel, kind, params, state.ref_params, cfg.objective);
    if (shard_count == 0) {
      state.last_first_minibatch_min_ratio = res.min_ratio;
      state.last_first_minibatch_max_ratio = res.max_ratio;
    }
    grad_norm_sum += res.grad.norm();
    const double w = static_cast<double>(res.breakdown.token_count_used);
    ent_sum += w * res.breakdown.entropy_term;
    kl_sum += w * res.kl_mean;
    bal_sum += w * res.breakdown.balance_term;
    z_sum += w * res.breakdown.zloss_term;
    token_sum += res.breakdown.token_count_used;
    params = optimizer_step(params, res.grad, opt, adam);
    shard_count += 1;
  };

  if (budgeted) {
    for (const SelectedSet& shard : split_selection(selection, cfg.minibatch_count))
      run_shard(*eval, shard);
  } else {
    for (const Batch& shard : split_groups(*eval, cfg.minibatch_count))
      run_shard(shard, select_all(shard));
  }

  if (shard_count > 0) {
    m.grad_norm = grad_norm_sum / shard_count;
    const double w = static_cast<double>(token_sum);
    m.entropy_mean = ent_sum / w;
    m.kl_mean = kl_sum / w;
    m.balance_loss = bal_sum / w;
    m.z_loss = z_sum / w;
  }

  m.wall_time = cfg.sim_cost_overhead +
                cfg.sim_cost_per_token * static_cast<double>(m.tokens_selected);
  m.simulated_throughput = static_cast<double>(m.tokens_selected) / m.wall_time;

  // Commit.
  state.params = std::move(params);
  state.opt = std::move(opt);
  state.rng = rng_next;
  state.ledger.cumulative_rl_tokens += m.tokens_selected;
  state.step += 1;
  return m;
}

namespace {

std::vector<std::size_t> stage_pool(const TrainerState& state, const Stage& stage) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < state.problems.size(); ++i)
    for (Domain d : stage.domains)
      if (state.problems[i].domain == d) {
        pool.push_back(i);
        break;
      }
  if (pool.empty()) throw std::invalid_argument("run_stage: stage dataset is empty");
  return pool;
}

// Uniform without replacement per epoch: the stream of problems is the
// concatenation of per-epoch shuffles, each derived statelessly from
// (seed, stage, epoch) so resumed runs draw identically.
std::vector<const Problem*> draw_problems(const TrainerState& state,
                                          const std::vector<std::size_t>& pool) {
  const std::size_t pool_size = pool.size();
  const std::int64_t base = state.step_in_stage * state.cfg.prompts_per_step;
  std::vector<const Problem*> out;
  out.reserve(static_cast<std::size_t>(state.cfg.prompts_per_step));
  std::vector<std::size_t> perm;
  std::int64_t perm_epoch = -1;
  for (int j = 0; j < state.cfg.prompts_per_step; ++j) {
    const std::int64_t pos = base + j;
    const std::int64_t epoch = pos / static_cast<std::int64_t>(pool_size);
    if (epoch != perm_epoch) {
      perm = pool;
      Rng shuffle_rng(sub_seed(state.cfg.seed, 0xE90C4,
                               static_cast<std::uint64_t>(state.stage_index),
                               static_cast<std::uint64_t>(epoch)));
      shuffle_rng.shuffle(perm);
      perm_epoch = epoch;
    }
    const std::size_t off = static_cast<std::size_t>(pos % static_cast<std::int64_t>(pool_size));
    out.push_back(&state.problems[perm[off]]);
  }
  return out;
}

}  // namespace

std::vector<StepMetrics> run_stage(
    TrainerState& state, const Stage& stage,
    const std::function<void(const TrainerState&, const StepMetrics&)>& on_step) {
  if (stage.steps < 0) throw std::invalid_argument("run_stage: negative step count");
  const std::vector<std::size_t> pool = stage_pool(state, stage);
  std::vector<StepMetrics> out;
  out.reserve(static_cast<std::size_t>(stage.steps));
  while (state.step_in_stage < stage.steps) {
    const std::vector<const Problem*> problems = draw_problems(state, pool);
    out.push_back(train_step(state, problems, stage.max_response_len));
    state.step_in_stage += 1;
    if (on_step) on_step(state, out.back());
  }
  state.stage_index += 1;
  state.step_in_stage = 0;
  return out;
}

std::string metrics_csv_header() {
  return "step,reward_mean,reward_std,response_len_mean,response_len_p95,tokens_selected,"
         "tokens_discarded,underbudget,grad_norm,entropy_mean,kl_mean,balance_loss,z_loss,"
         "simulated_throughput,wall_time,domain_mix";
}

std::string metrics_csv_row(const StepMetrics& m) {
  std::string row;
  row += fmt_int(m.step);
  row += ',' + fmt_real(m.reward_mean);
  row += ',' + fmt_real(m.reward_std);
  row += ',' + fmt_real(m.response_len_mean);
  row += ',' + fmt_real(m.response_len_p95);
  row += ',' + fmt_int(m.tokens_selected);
  row += ',' + fmt_int(m.tokens_discarded);
  row += ',' + std::string(m.underbudget ? "1" : "0");
  row += ',' + fmt_real(m.grad_norm);
  row += ',' + fmt_real(m.entropy_mean);
  row += ',' + fmt_real(m.kl_mean);
  row += ',' + fmt_real(m.balance_loss);
  row += ',' + fmt_real(m.z_loss);
  row += ',' + fmt_real(m.simulated_throughput);
  row += ',' + fmt_real(m.wall_time);
  row += ',' + m.domain_mix;
  return row;
}

void write_metrics_csv(const std::string& path, const std::vector<StepMetrics>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << metrics_csv_header() << '\n';
  for (const StepMetrics& m : rows) out << metrics_csv_row(m) << '\n';
}

namespace {

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Mat(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index jj = 0; jj < cols; ++jj) m(i, jj) = j.at(i).at(jj).get<double>();
  return m;
}

json grad_to_json(const PolicyGrad& g) {
  json j;
  j["router"] = mat_to_json(g.router);
  json experts = json::array();
  for (const Mat& w : g.experts) experts.push_back(mat_to_json(w));
  j["experts"] = std::move(experts);
  return j;
}

PolicyGrad grad_from_json(const json& j) {
  PolicyGrad g;
  g.router = mat_from_json(j.at("router"));
  for (const json& w : j.at("experts")) g.experts.push_back(mat_from_json(w));
  return g;
}

json params_to_json(const PolicyParams& p) {
  json j;
  j["vocab_size"] = p.vocab_size;
  j["context_order"] = p.context_order;
  j["expert_count"] = p.expert_count;
  j["top_k"] = p.top_k;
  j["pair_features"] = p.pair_features;
  j["head_features"] = p.head_features;
  j["version"] = p.version;
  j["router"] = mat_to_json(p.router);
  json experts = json::array();
  for (const Mat& w : p.experts) experts.push_back(mat_to_json(w));
  j["experts"] = std::move(experts);
  return j;
}

PolicyParams params_from_json(const json& j) {
  PolicyParams p;
  p.vocab_size = j.at("vocab_size").get<int>();
  p.context_order = j.at("context_order").get<int>();
  p.expert_count = j.at("expert_count").get<int>();
  p.top_k = j.at("top_k").get<int>();
  p.pair_features = j.at("pair_features").get<bool>();
  p.head_features = j.at("head_features").get<int>();
  p.version = j.at("version").get<std::int64_t>();
  p.router = mat_from_json(j.at("router"));
  for (const json& w : j.at("experts")) p.experts.push_back(mat_from_json(w));
  return p;
}

}  // namespace

std::string checkpoint_to_json(const TrainerState& state) {
  json j;
  j["format"] = "c3po-checkpoint";
  j["format_version"] = 1;
  j["vocab"] = state.vocab.tokens();
  j["params"] = params_to_json(state.params);
  j["ref_params"] = params_to_json(state.ref_params);
  j["optimizer"] = {{"step", state.opt.step},
                    {"m", grad_to_json(state.opt.m)},
                    {"v", grad_to_json(state.opt.v)}};
  j["rng"] = state.rng.serialize();
  j["ledger"] = {{"cumulative_rl_tokens", state.ledger.cumulative_rl_tokens},
                 {"reference_sft_tokens", state.ledger.reference_sft_tokens}};
  j["step"] = state.step;
  j["stage_index"] = state.stage_index;
  j["step_in_stage"] = state.step_in_stage;
  return j.dump(2);
}

TrainerState checkpoint_from_json(const std::string& text, const TrainerConfig& cfg,
                                  std::vector<Problem> problems) {
  const json j = json::parse(text);
  if (j.at("format").get<std::string>() != "c3po-checkpoint")
    throw std::runtime_error("checkpoint: unrecognized format");
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported format version");
  TrainerState st;
  st.cfg = cfg;
  st.problems = std::move(problems);
  st.vocab = Vocabulary(j.at("vocab").get<std::vector<std::string>>());
  st.params = params_from_json(j.at("params"));
  st.ref_params = params_from_json(j.at("ref_params"));
  st.opt.step = j.at("optimizer").at("step").get<std::int64_t>();
  st.opt.m = grad_from_json(j.at("optimizer").at("m"));
  st.opt.v = grad_from_json(j.at("optimizer").at("v"));
  st.rng = Rng::deserialize(j.at("rng").get<std::string>());
  st.ledger.cumulative_rl_tokens = j.at("ledger").at("cumulative_rl_tokens").get<std::int64_t>();
  st.ledger.reference_sft_tokens = j.at("ledger").at("reference_sft_tokens").get<std::int64_t>();
  st.step = j.at("step").get<std::int64_t>();
  st.stage_index = j.at("stage_index").get<int>();
  st.step_in_stage = j.at("step_in_stage").get<std::int64_t>();
  return st;
}

void save_checkpoint(const std::string& path, const TrainerState& state) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << checkpoint_to_json(state) << '\n';
}

TrainerState load_checkpoint(const std::string& path, const TrainerConfig& cfg,
                             std::vector<Problem> problems) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str(), cfg, std::move(problems));
}

std::pair<Vocabulary, PolicyParams> load_checkpoint_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint_policy: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const json j = json::parse(ss.str());
  return {Vocabulary(j.at("vocab").get<std::vector<std::string>>()),
          params_from_json(j.at("params"))};
}

}  // namespace c3po
