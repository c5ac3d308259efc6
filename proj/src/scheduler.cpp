#include "c3po/scheduler.hpp"

#include <stdexcept>

#include "c3po/rng.hpp"

namespace c3po {

std::int64_t Batch::total_tokens() const {
  std::int64_t n = 0;
  for (const ResponseGroup& g : groups)
    for (const Response& r : g.responses) n += r.length();
  return n;
}

SelectedSet select_budget(const Batch& batch, std::int64_t token_budget, SelectionOrder order,
                          std::uint64_t seed) {
  if (batch.groups.empty()) throw std::invalid_argument("select_budget: empty batch");
  if (token_budget < 1) throw std::invalid_argument("select_budget: budget must be >= 1");

  std::vector<std::pair<int, int>> visit;
  visit.reserve(static_cast<std::size_t>(batch.prompt_count()) *
                static_cast<std::size_t>(batch.group_size));
  for (int g = 0; g < batch.prompt_count(); ++g)
    for (int r = 0; r < static_cast<int>(batch.groups[static_cast<std::size_t>(g)].responses.size()); ++r)
      visit.emplace_back(g, r);
  if (order == SelectionOrder::kSeededShuffle) {
    Rng rng(seed);
    rng.shuffle(visit);
  }

  SelectedSet sel;
  for (const auto& [g, r] : visit) {
    if (sel.total_tokens >= token_budget) break;
    const Response& resp =
        batch.groups[static_cast<std::size_t>(g)].responses[static_cast<std::size_t>(r)];
    const int len = resp.length();
    if (len == 0) continue;
    const std::int64_t remaining = token_budget - sel.total_tokens;
    const int take = static_cast<int>(std::min<std::int64_t>(len, remaining));
    sel.entries.push_back({g, r, take, len});
    sel.total_tokens += take;
  }
  sel.underbudget = sel.total_tokens < token_budget;
  return sel;
}

SelectedSet select_all(const Batch& batch) {
  SelectedSet sel;
  for (int g = 0; g < batch.prompt_count(); ++g) {
    const ResponseGroup& group = batch.groups[static_cast<std::size_t>(g)];
    for (int r = 0; r < static_cast<int>(group.responses.size()); ++r) {
      const int len = group.responses[static_cast<std::size_t>(r)].length();
      if (len == 0) continue;
      sel.entries.push_back({g, r, len, len});
      sel.total_tokens += len;
    }
  }
  sel.underbudget = false;
  return sel;
}

Batch dynamic_sampling_filter(const Batch& batch) {
  Batch out;
  out.group_size = batch.group_size;
  out.behavior_params_version = batch.behavior_params_version;
  out.temperature = batch.temperature;
  for (const ResponseGroup& g : batch.groups) {
    bool varies = false;
    for (std::size_t i = 1; i < g.responses.size(); ++i)
      varies = varies || g.responses[i].reward != g.responses[0].reward;
    if (varies) out.groups.push_back(g);
  }
  return out;
}

BudgetReport budget_report(const SelectedSet& selected) {
  BudgetReport rep;
  rep.total_tokens = selected.total_tokens;
  rep.responses_used = static_cast<int>(selected.entries.size());
  rep.underbudget = selected.underbudget;
  if (!selected.entries.empty()) {
    const SelectionEntry& last = selected.entries.back();
    rep.truncated_tokens_discarded = last.full_length - last.included_tokens;
  }
  return rep;
}

}  // namespace c3po
