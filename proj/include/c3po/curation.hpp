#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "c3po/policy.hpp"
#include "c3po/rewards.hpp"
#include "c3po/vocab.hpp"

namespace c3po {

struct CurationConfig {
  int shingle_n = 8;
  double jaccard_threshold = 0.8;
  /// A record is dropped as multi-subquestion when at least two distinct
  /// markers appear in its prompt (case-insensitive).
  std::vector<std::string> subquestion_markers = {"(a)", "(b)", "(c)", "(i)", "(ii)", "(iii)"};
  /// Exclusive keep bounds for the difficulty filter.
  double keep_min = 0.0;
  double keep_max = 1.0;
};

struct CurationReport {
  std::int64_t input_count = 0;
  std::map<std::string, std::int64_t> removed_by_rule;
  std::int64_t retained_count = 0;
  std::vector<std::int64_t> pass_rate_histogram;  // 10 buckets, [k/10, (k+1)/10)
  bool pass_rate_stage_ran = false;

  std::int64_t removed_total() const;
  std::string to_text() const;
  std::string to_json() const;
};

/// Rule-based cleansing: drops empty/invalid-encoding prompts, records
/// lacking a valid answer, multi-subquestion prompts, and guessable answers
/// (multiple-choice letters, True/False, Yes/No). First matching rule wins
/// for the report counts.
std::pair<std::vector<Problem>, CurationReport> cleanse(const std::vector<Problem>& problems,
                                                        const CurationConfig& cfg = {});

/// Optional semantic-similarity stage for dedupe; identity (never similar)
/// when unset.
using SimilarityHook = std::function<bool(const Problem&, const Problem&)>;

/// Character-based dedup and decontamination: normalized n-gram shingle
/// fingerprints compared by exact-set Jaccard. Keep-first among duplicates,
/// by input order; anything matching the eval set is counted as
/// decontaminated.
std::pair<std::vector<Problem>, CurationReport> dedupe(const std::vector<Problem>& problems,
                                                       const std::vector<Problem>& eval_set,
                                                       const CurationConfig& cfg = {},
                                                       const SimilarityHook& semantic = nullptr);

/// Fraction of n i.i.d. sampled responses earning reward 1. Deterministic in
/// (problem, params, n_samples, seed).
double pass_rate(const Problem& problem, const PolicyParams& params, const Vocabulary& vocab,
                 int n_samples, int max_len, double temperature, std::uint64_t seed);

/// Retains problems whose rate lies strictly inside (keep_min, keep_max).
std::vector<Problem> difficulty_filter(const std::vector<Problem>& problems,
                                       const std::vector<double>& rates, double keep_min = 0.0,
                                       double keep_max = 1.0);

struct CuratePipelineOptions {
  CurationConfig config;
  // Pass-rate annotation runs only when a policy is supplied.
  const PolicyParams* params = nullptr;
  const Vocabulary* vocab = nullptr;
  int n_samples = 32;
  int max_len = 64;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// cleanse -> dedupe/decontaminate -> (optional) pass-rate annotation and
/// difficulty filter. The merged report prefixes rule names by stage.
std::pair<std::vector<Problem>, CurationReport> curate_pipeline(
    const std::vector<Problem>& input, const std::vector<Problem>& eval_set,
    const CuratePipelineOptions& options);

}  // namespace c3po
