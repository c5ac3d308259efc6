#include <doctest.h>

#include <numeric>

#include "c3po/scheduler.hpp"
#include "c3po/rng.hpp"
#include "oracles.hpp"

using namespace c3po;

namespace {

/// Batch with prescribed response lengths (tokens are irrelevant here).
Batch length_batch(const std::vector<std::vector<int>>& group_lengths) {
  Batch b;
  b.group_size = group_lengths.empty() ? 0 : static_cast<int>(group_lengths[0].size());
  for (const auto& lens : group_lengths) {
    ResponseGroup g;
    for (int len : lens) {
      Response r;
      r.token_ids.assign(static_cast<std::size_t>(len), 0);
      r.behavior_logprobs.assign(static_cast<std::size_t>(len), -1.0);
      g.responses.push_back(std::move(r));
    }
    b.groups.push_back(std::move(g));
  }
  return b;
}

std::vector<int> natural_lengths(const Batch& b) {
  std::vector<int> lens;
  for (const ResponseGroup& g : b.groups)
    for (const Response& r : g.responses) lens.push_back(r.length());
  return lens;
}

}  // namespace

TEST_CASE("select_budget: worked examples") {
  // lengths 100, 200, 300 with budget 450: all three, last truncated to 150
  const Batch b = length_batch({{100, 200, 300}});
  const SelectedSet sel = select_budget(b, 450, SelectionOrder::kNatural);
  CHECK(sel.entries.size() == 3);
  CHECK(sel.total_tokens == 450);
  CHECK(sel.entries[0].included_tokens == 100);
  CHECK(sel.entries[1].included_tokens == 200);
  CHECK(sel.entries[2].included_tokens == 150);
  CHECK_FALSE(sel.underbudget);
  const BudgetReport rep = budget_report(sel);
  CHECK(rep.total_tokens == 450);
  CHECK(rep.responses_used == 3);
  CHECK(rep.truncated_tokens_discarded == 150);
  CHECK_FALSE(rep.underbudget);

  // single long response crossing the budget immediately
  const SelectedSet one = select_budget(length_batch({{500}}), 400, SelectionOrder::kNatural);
  CHECK(one.entries.size() == 1);
  CHECK(one.entries[0].included_tokens == 400);
  CHECK(one.total_tokens == 400);

  // exhausted batch: everything selected, underbudget flagged
  const SelectedSet under = select_budget(length_batch({{100, 100}}), 300, SelectionOrder::kNatural);
  CHECK(under.total_tokens == 200);
  CHECK(under.underbudget);
  const BudgetReport urep = budget_report(under);
  CHECK(urep.total_tokens == 200);
  CHECK(urep.responses_used == 2);
  CHECK(urep.truncated_tokens_discarded == 0);
  CHECK(urep.underbudget);

  // exact fit discards nothing
  const SelectedSet exact = select_budget(length_batch({{64, 64}}), 128, SelectionOrder::kNatural);
  CHECK(exact.total_tokens == 128);
  CHECK_FALSE(exact.underbudget);
  CHECK(budget_report(exact).truncated_tokens_discarded == 0);

  CHECK_THROWS(select_budget(Batch{}, 10, SelectionOrder::kNatural));
  CHECK_THROWS(select_budget(b, 0, SelectionOrder::kNatural));
}

TEST_CASE("select_budget matches the prefix-scan oracle on random instances") {
  Rng rng(123);
  for (int it = 0; it < 2000; ++it) {
    const int n = 1 + static_cast<int>(rng.next_below(12));
    std::vector<int> lens;
    long long total = 0;
    for (int i = 0; i < n; ++i) {
      lens.push_back(1 + static_cast<int>(rng.next_below(50)));
      total += lens.back();
    }
    const long long budget = 1 + static_cast<long long>(rng.next_below(
                                     static_cast<std::uint64_t>(total + 20)));
    const Batch b = length_batch({lens});
    const SelectedSet sel = select_budget(b, budget, SelectionOrder::kNatural);
    const auto oracle = oracles::prefix_scan(lens, budget);

    CHECK(sel.total_tokens == oracle.selected_tokens);
    CHECK(static_cast<int>(sel.entries.size()) == oracle.responses_used);
    CHECK(sel.underbudget == oracle.underbudget);
    CHECK(budget_report(sel).truncated_tokens_discarded == oracle.discarded);

    // greedy constraints hold verbatim when the batch covers the budget
    if (!sel.underbudget) {
      long long before = 0;
      for (std::size_t i = 0; i + 1 < sel.entries.size(); ++i)
        before += sel.entries[i].full_length;
      CHECK(before < budget);
      CHECK(before + sel.entries.back().full_length >= budget);
      CHECK(sel.total_tokens == budget);
    }

    // prefix property: natural order selects a contiguous prefix
    for (std::size_t i = 0; i < sel.entries.size(); ++i)
      CHECK(sel.entries[i].response == static_cast<int>(i));
  }
}

TEST_CASE("seeded shuffle order is deterministic and still hits the budget") {
  Rng rng(9);
  std::vector<int> lens;
  for (int i = 0; i < 24; ++i) lens.push_back(1 + static_cast<int>(rng.next_below(30)));
  const Batch b = length_batch({lens});
  const long long budget = 100;
  const SelectedSet a = select_budget(b, budget, SelectionOrder::kSeededShuffle, 5);
  const SelectedSet c = select_budget(b, budget, SelectionOrder::kSeededShuffle, 5);
  CHECK(a.total_tokens == budget);
  REQUIRE(a.entries.size() == c.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].response == c.entries[i].response);
    CHECK(a.entries[i].included_tokens == c.entries[i].included_tokens);
  }
  const SelectedSet d = select_budget(b, budget, SelectionOrder::kSeededShuffle, 6);
  bool differs = d.entries.size() != a.entries.size();
  for (std::size_t i = 0; !differs && i < a.entries.size(); ++i)
    differs = a.entries[i].response != d.entries[i].response;
  CHECK(differs);  // a different seed visits in a different order
}

TEST_CASE("select_all covers every token") {
  const Batch b = length_batch({{3, 4}, {5, 1}});
  const SelectedSet sel = select_all(b);
  CHECK(sel.total_tokens == b.total_tokens());
  CHECK(sel.entries.size() == 4);
  CHECK_FALSE(sel.underbudget);
  const auto lens = natural_lengths(b);
  for (std::size_t i = 0; i < sel.entries.size(); ++i)
    CHECK(sel.entries[i].included_tokens == lens[i]);
}

TEST_CASE("dynamic sampling filter drops only zero-variance groups") {
  Batch b = length_batch({{2, 2, 2, 2}, {2, 2, 2, 2}, {2, 2, 2, 2}});
  auto set_rewards = [&](int g, std::vector<double> rw) {
    for (std::size_t i = 0; i < rw.size(); ++i) b.groups[g].responses[i].reward = rw[i];
  };
  set_rewards(0, {1, 1, 1, 1});  // removed
  set_rewards(1, {1, 0, 0, 0});  // kept
  set_rewards(2, {0, 1, 1, 0});  // kept
  const Batch filtered = dynamic_sampling_filter(b);
  CHECK(filtered.prompt_count() == 2);

  // soundness: never removes a group with reward variance
  Rng rng(17);
  for (int it = 0; it < 200; ++it) {
    Batch rb = length_batch({{1, 1, 1}});
    bool varies = false;
    for (Response& r : rb.groups[0].responses) {
      r.reward = rng.next_double() < 0.5 ? 1.0 : 0.0;
    }
    for (std::size_t i = 1; i < 3; ++i)
      varies = varies || rb.groups[0].responses[i].reward != rb.groups[0].responses[0].reward;
    const Batch out = dynamic_sampling_filter(rb);
    CHECK(out.prompt_count() == (varies ? 1 : 0));
  }
}
