#pragma once

// Shared builders for objective/scheduler/trainer tests: batches sampled from
// a real policy snapshot so behavior log-probs are authentic, with synthetic
// reward patterns attached through the production advantage path.

#include <algorithm>
#include <string>
#include <vector>

#include "c3po/objective.hpp"
#include "c3po/policy.hpp"
#include "c3po/rng.hpp"
#include "c3po/scheduler.hpp"
#include "c3po/vocab.hpp"

namespace helpers {

struct BatchSpec {
  int groups = 2;
  int group_size = 4;
  int max_len = 6;
  double temperature = 1.0;
  std::uint64_t seed = 99;
};

inline c3po::Batch sampled_batch(const c3po::PolicyParams& params_old,
                                 const c3po::Vocabulary& vocab, const BatchSpec& spec,
                                 const c3po::ObjectiveConfig& cfg = {}) {
  c3po::Batch batch;
  batch.group_size = spec.group_size;
  batch.behavior_params_version = params_old.version;
  batch.temperature = spec.temperature;
  c3po::Rng reward_rng(c3po::sub_seed(spec.seed, 0xF00D));
  for (int g = 0; g < spec.groups; ++g) {
    c3po::ResponseGroup group;
    group.problem_id = "p" + std::to_string(g);
    group.prompt_tokens = {g % vocab.size(), (g + 3) % vocab.size()};
    std::vector<double> rewards;
    for (int k = 0; k < spec.group_size; ++k) {
      c3po::Response r =
          c3po::sample_response(params_old, vocab, group.prompt_tokens, spec.max_len,
                                spec.temperature, c3po::sub_seed(spec.seed, g, k));
      // half the group rewarded so the advantages are non-degenerate
      r.reward = (k % 2 == 0) ? 1.0 : 0.0;
      if (reward_rng.next_double() < 0.15) r.reward = 1.0 - r.reward;
      rewards.push_back(r.reward);
      group.responses.push_back(std::move(r));
    }
    const auto adv = c3po::group_advantages(rewards, cfg);
    for (int k = 0; k < spec.group_size; ++k)
      group.responses[static_cast<std::size_t>(k)].advantage = adv[static_cast<std::size_t>(k)];
    batch.groups.push_back(std::move(group));
  }
  return batch;
}

/// Largest gap violation for top-k routing over every trained context; lets
/// finite-difference tests skip instances sitting on a routing tie.
inline double min_routing_gap(const c3po::Batch& batch, const c3po::PolicyParams& params) {
  if (params.top_k >= params.expert_count) return 1.0;
  double min_gap = 1.0;
  for (const c3po::ResponseGroup& g : batch.groups) {
    for (const c3po::Response& r : g.responses) {
      std::vector<int> ctx = g.prompt_tokens;
      for (int t = 0; t < r.length(); ++t) {
        const c3po::TokenDistribution d = c3po::forward(params, ctx, batch.temperature);
        std::vector<double> probs(d.router_probs.data(),
                                  d.router_probs.data() + params.expert_count);
        std::sort(probs.rbegin(), probs.rend());
        min_gap = std::min(min_gap, probs[static_cast<std::size_t>(params.top_k - 1)] -
                                        probs[static_cast<std::size_t>(params.top_k)]);
        ctx.push_back(r.token_ids[static_cast<std::size_t>(t)]);
      }
    }
  }
  return min_gap;
}

/// Hand-built deterministic answerer: for any prompt ending in a digit it
/// emits \boxed{ <answer> } <eos>, where the answer is the highest-logit
/// candidate. Rules live on the last-token and second-to-last-token feature
/// slots of a single expert.
inline c3po::PolicyParams scripted_policy(const c3po::Vocabulary& v,
                                          const std::vector<int>& answer_tokens) {
  c3po::PolicyParams p = c3po::PolicyParams::zeros(v.size(), 2, 1, 1);
  c3po::Mat& w = p.experts[0];
  const int slot_width = v.size() + 1;
  auto slot_feature = [&](int slot, int token) { return slot * slot_width + token; };
  for (int d = 0; d <= 9; ++d)
    w(slot_feature(1, v.id(std::string(1, static_cast<char>('0' + d)))), v.box_open_id()) += 30.0;
  for (int tok : answer_tokens) w(slot_feature(1, v.box_open_id()), tok) += 60.0;
  w(slot_feature(0, v.box_open_id()), v.box_close_id()) += 90.0;
  w(slot_feature(1, v.box_close_id()), v.eos_id()) += 120.0;
  return p;
}

}  // namespace helpers
