#include "c3po/curation.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "c3po/format.hpp"
#include "c3po/rng.hpp"

namespace c3po {

std::int64_t CurationReport::removed_total() const {
  std::int64_t n = 0;
  for (const auto& [rule, count] : removed_by_rule) n += count;
  return n;
}

std::string CurationReport::to_text() const {
  std::ostringstream os;
  os << "curation report\n";
  os << "  input:    " << input_count << "\n";
  for (const auto& [rule, count] : removed_by_rule)
    os << "  removed(" << rule << "): " << count << "\n";
  os << "  retained: " << retained_count << "\n";
  if (pass_rate_stage_ran) {
    os << "  pass-rate histogram (10 buckets):";
    for (std::int64_t c : pass_rate_histogram) os << ' ' << c;
    os << "\n";
  } else {
    os << "  pass-rate stage: skipped (no policy checkpoint supplied)\n";
  }
  return os.str();
}

std::string CurationReport::to_json() const {
  nlohmann::json j;
  j["input_count"] = input_count;
  j["removed_by_rule"] = removed_by_rule;
  j["retained_count"] = retained_count;
  j["pass_rate_stage_ran"] = pass_rate_stage_ran;
  if (pass_rate_stage_ran) j["pass_rate_histogram"] = pass_rate_histogram;
  return j.dump(2);
}

namespace {

bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    int extra;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xE) extra = 2;
    else if ((c >> 3) == 0x1E) extra = 3;
    else return false;
    if (i + static_cast<std::size_t>(extra) >= s.size()) return false;
    for (int k = 1; k <= extra; ++k)
      if ((static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]) >> 6) != 0x2)
        return false;
    i += static_cast<std::size_t>(extra) + 1;
  }
  return true;
}

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

/// Guessable forms: bare multiple-choice letters and boolean words.
bool guessable_gold(const std::string& gold) {
  const std::string g = lowercase(normalize_answer(gold));
  if (g == "yes" || g == "no" || g == "true" || g == "false") return true;
  if (g.size() == 1 && g[0] >= 'a' && g[0] <= 'e') return true;
  return false;
}

bool multi_subquestion(const std::string& prompt, const std::vector<std::string>& markers) {
  const std::string p = lowercase(prompt);
  int hits = 0;
  for (const std::string& m : markers)
    if (p.find(lowercase(m)) != std::string::npos) ++hits;
  return hits >= 2;
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
  return h;
}

/// Lowercased alphanumeric-only text, hashed into the set of its n-char
/// shingles (or the whole string when shorter than n).
std::unordered_set<std::uint64_t> fingerprint(const std::string& text, int n) {
  std::string norm;
  norm.reserve(text.size());
  for (unsigned char c : text)
    if (std::isalnum(c)) norm += static_cast<char>(std::tolower(c));
  std::unordered_set<std::uint64_t> out;
  if (norm.size() < static_cast<std::size_t>(n)) {
    out.insert(fnv1a(norm.data(), norm.size()));
    return out;
  }
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= norm.size(); ++i)
    out.insert(fnv1a(norm.data() + i, static_cast<std::size_t>(n)));
  return out;
}

double jaccard(const std::unordered_set<std::uint64_t>& a,
               const std::unordered_set<std::uint64_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  for (std::uint64_t h : small) inter += large.count(h);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

std::pair<std::vector<Problem>, CurationReport> cleanse(const std::vector<Problem>& problems,
                                                        const CurationConfig& cfg) {
  CurationReport rep;
  rep.input_count = static_cast<std::int64_t>(problems.size());
  std::vector<Problem> kept;
  kept.reserve(problems.size());
  for (const Problem& p : problems) {
    const char* rule = nullptr;
    if (p.prompt.empty() || is_blank(p.prompt)) rule = "empty_prompt";
    else if (!valid_utf8(p.prompt) || !valid_utf8(p.gold)) rule = "invalid_encoding";
    else if (p.domain == Domain::kCode ? p.tests.empty() : p.gold.empty()) rule = "missing_gold";
    else if (multi_subquestion(p.prompt, cfg.subquestion_markers)) rule = "multi_subquestion";
    else if (p.domain != Domain::kCode && guessable_gold(p.gold)) rule = "guessable_answer";
    if (rule) rep.removed_by_rule[rule] += 1;
    else kept.push_back(p);
  }
  rep.retained_count = static_cast<std::int64_t>(kept.size());
  return {std::move(kept), std::move(rep)};
}

std::pair<std::vector<Problem>, CurationReport> dedupe(const std::vector<Problem>& problems,
                                                       const std::vector<Problem>& eval_set,
                                                       const CurationConfig& cfg,
                                                       const SimilarityHook& semantic) {
  if (cfg.shingle_n < 1) throw std::invalid_argument("dedupe: shingle_n must be >= 1");
  if (!(cfg.jaccard_threshold > 0.0 && cfg.jaccard_threshold <= 1.0))
    throw std::invalid_argument("dedupe: jaccard_threshold must be in (0, 1]");
  CurationReport rep;
  rep.input_count = static_cast<std::int64_t>(problems.size());

  std::vector<std::unordered_set<std::uint64_t>> eval_prints;
  eval_prints.reserve(eval_set.size());
  for (const Problem& p : eval_set) eval_prints.push_back(fingerprint(p.prompt, cfg.shingle_n));

  std::vector<Problem> kept;
  std::vector<std::unordered_set<std::uint64_t>> kept_prints;
  for (const Problem& p : problems) {
    const auto fp = fingerprint(p.prompt, cfg.shingle_n);
    const char* rule = nullptr;
    for (const auto& ep : eval_prints)
      if (jaccard(fp, ep) >= cfg.jaccard_threshold) {
        rule = "decontaminated";
        break;
      }
    if (!rule) {
      for (std::size_t i = 0; i < kept_prints.size(); ++i) {
        if (jaccard(fp, kept_prints[i]) >= cfg.jaccard_threshold) {
          rule = "duplicate";
          break;
        }
        if (semantic && semantic(p, kept[i])) {
          rule = "semantic_duplicate";
          break;
        }
      }
    }
    if (rule) {
      rep.removed_by_rule[rule] += 1;
    } else {
      kept.push_back(p);
      kept_prints.push_back(std::move(fp));
    }
  }
  rep.retained_count = static_cast<std::int64_t>(kept.size());
  return {std::move(kept), std::move(rep)};
}

double pass_rate(const Problem& problem, const PolicyParams& params, const Vocabulary& vocab,
                 int n_samples, int max_len, double temperature, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("pass_rate: n_samples must be >= 1");
  const std::vector<int> prompt = vocab.tokenize(problem.prompt);
  int passed = 0;
  for (int i = 0; i < n_samples; ++i) {
    const Response r = sample_response(params, vocab, prompt, max_len, temperature,
                                       sub_seed(seed, static_cast<std::uint64_t>(i), 0x9a55));
    if (reward(vocab.render(r.token_ids), problem) == 1.0) ++passed;
  }
  return static_cast<double>(passed) / static_cast<double>(n_samples);
}

std::vector<Problem> difficulty_filter(const std::vector<Problem>& problems,
                                       const std::vector<double>& rates, double keep_min,
                                       double keep_max) {
  if (problems.size() != rates.size())
    throw std::invalid_argument("difficulty_filter: every problem needs a rate");
  std::vector<Problem> kept;
  for (std::size_t i = 0; i < problems.size(); ++i)
    if (rates[i] > keep_min && rates[i] < keep_max) kept.push_back(problems[i]);
  return kept;
}

std::pair<std::vector<Problem>, CurationReport> curate_pipeline(
    const std::vector<Problem>& input, const std::vector<Problem>& eval_set,
    const CuratePipelineOptions& options) {
  CurationReport rep;
  rep.input_count = static_cast<std::int64_t>(input.size());

  auto [cleansed, cleanse_rep] = cleanse(input, options.config);
  for (const auto& [rule, count] : cleanse_rep.removed_by_rule)
    rep.removed_by_rule["cleanse." + rule] += count;

  auto [deduped, dedupe_rep] = dedupe(cleansed, eval_set, options.config);
  for (const auto& [rule, count] : dedupe_rep.removed_by_rule)
    rep.removed_by_rule["dedupe." + rule] += count;

  std::vector<Problem> retained = std::move(deduped);
  if (options.params != nullptr) {
    if (options.vocab == nullptr)
      throw std::invalid_argument("curate_pipeline: pass-rate stage needs a vocabulary");
    rep.pass_rate_stage_ran = true;
    rep.pass_rate_histogram.assign(10, 0);
    std::vector<double> rates;
    rates.reserve(retained.size());
    for (std::size_t i = 0; i < retained.size(); ++i) {
      const double rate =
          pass_rate(retained[i], *options.params, *options.vocab, options.n_samples,
                    options.max_len, options.temperature,
                    sub_seed(options.seed, static_cast<std::uint64_t>(i)));
      rates.push_back(rate);
      const int bucket = std::min(9, static_cast<int>(rate * 10.0));
      rep.pass_rate_histogram[static_cast<std::size_t>(bucket)] += 1;
      retained[i].difficulty = 1.0 - rate;  // model-aware difficulty annotation
    }
    const std::size_t before = retained.size();
    retained = difficulty_filter(retained, rates, options.config.keep_min,
                                 options.config.keep_max);
    rep.removed_by_rule["difficulty.out_of_keep_range"] +=
        static_cast<std::int64_t>(before - retained.size());
  }
  rep.retained_count = static_cast<std::int64_t>(retained.size());
  return {std::move(retained), std::move(rep)};
}

}  // namespace c3po
