#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c3po/policy.hpp"
#include "c3po/rewards.hpp"

namespace c3po {

struct ResponseGroup {
  std::string problem_id;
  Domain domain = Domain::kMath;
  std::vector<int> prompt_tokens;
  std::vector<Response> responses;  // exactly K, sampled i.i.d. from pi_old
};

/// One training step's rollout set, tied to the frozen behavior snapshot that
/// produced it.
struct Batch {
  int group_size = 0;  // K
  std::vector<ResponseGroup> groups;
  std::int64_t behavior_params_version = 0;
  double temperature = 1.0;  // sampling temperature the behavior log-probs used

  int prompt_count() const { return static_cast<int>(groups.size()); }
  std::int64_t total_tokens() const;
};

enum class SelectionOrder { kNatural, kSeededShuffle };

struct SelectionEntry {
  int group = 0;
  int response = 0;
  int included_tokens = 0;  // full length for all entries except possibly the last
  int full_length = 0;
};

/// The budgeted token set. total_tokens equals the budget exactly unless the
/// batch ran out first (underbudget).
struct SelectedSet {
  std::vector<SelectionEntry> entries;
  std::int64_t total_tokens = 0;
  bool underbudget = false;
};

/// Greedy budget selection: walk responses in the chosen order accumulating
/// whole responses while the running total is below the budget; the response
/// that crosses it is tail-truncated so the total lands on the budget
/// exactly. Advantages are computed on the full batch beforehand and are not
/// touched here.
SelectedSet select_budget(const Batch& batch, std::int64_t token_budget, SelectionOrder order,
                          std::uint64_t seed = 0);

/// Every token of every response, natural order. The full-batch counterpart
/// of select_budget used by the unbudgeted objective.
SelectedSet select_all(const Batch& batch);

/// Sample-level baseline: drops groups whose rewards are all equal (zero
/// advantage variance) and returns the reduced batch.
Batch dynamic_sampling_filter(const Batch& batch);

struct BudgetReport {
  std::int64_t total_tokens = 0;
  int responses_used = 0;
  std::int64_t truncated_tokens_discarded = 0;
  bool underbudget = false;
};

BudgetReport budget_report(const SelectedSet& selected);

}  // namespace c3po
