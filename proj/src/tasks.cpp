#include "c3po/tasks.hpp"

#include <cctype>
#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "c3po/rng.hpp"

namespace c3po {

std::string to_string(LengthProfile p) {
  switch (p) {
    case LengthProfile::kShort: return "short";
    case LengthProfile::kHeavyTailed: return "heavy_tailed";
    case LengthProfile::kBimodal: return "bimodal";
  }
  throw std::logic_error("to_string: bad LengthProfile");
}

LengthProfile length_profile_from_string(const std::string& s) {
  if (s == "short") return LengthProfile::kShort;
  if (s == "heavy_tailed") return LengthProfile::kHeavyTailed;
  if (s == "bimodal") return LengthProfile::kBimodal;
  throw std::invalid_argument("unknown length profile '" + s + "'");
}

namespace {

void validate(const GeneratorSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("GeneratorSpec: count must be >= 1");
  if (spec.operand_min < 0 || spec.operand_max < spec.operand_min)
    throw std::invalid_argument("GeneratorSpec: bad operand range");
  if (spec.depth < 1 || spec.depth > 16) throw std::invalid_argument("GeneratorSpec: bad depth");
  if (spec.ops.empty()) throw std::invalid_argument("GeneratorSpec: empty operator set");
  for (char c : spec.ops)
    if (c != '+' && c != '-' && c != '*' && c != '/')
      throw std::invalid_argument("GeneratorSpec: unsupported operator");
  if (spec.test_case_count < 1)
    throw std::invalid_argument("GeneratorSpec: test_case_count must be >= 1");
  if (spec.target_len_min < 1 || spec.target_len_max < spec.target_len_min)
    throw std::invalid_argument("GeneratorSpec: bad target length range");
}

/// Space-joined digit tokens, sign first: -60 -> "- 6 0".
std::string digits_of(std::int64_t v) {
  std::string out;
  if (v < 0) {
    out = "-";
    v = -v;
  }
  for (char c : std::to_string(v)) {
    if (!out.empty()) out += ' ';
    out += c;
  }
  return out;
}

void attach_length_tag(Problem& p, const GeneratorSpec& spec, Rng& rng) {
  int target = 0;
  switch (spec.length_profile) {
    case LengthProfile::kShort:
      return;  // no cap; the trainer's max_response_len governs
    case LengthProfile::kHeavyTailed: {
      // truncated Pareto: len_min * u^(-1/alpha), capped at len_max
      double u = rng.next_double();
      while (u <= 0.0) u = rng.next_double();
      const double raw = spec.target_len_min * std::pow(u, -1.0 / spec.pareto_alpha);
      target = static_cast<int>(std::min<double>(raw, spec.target_len_max));
      break;
    }
    case LengthProfile::kBimodal:
      target = rng.next_double() < 0.5 ? spec.target_len_min : spec.target_len_max;
      break;
  }
  p.tags.push_back("target_len:" + std::to_string(std::max(target, spec.target_len_min)));
}

std::int64_t rand_operand(const GeneratorSpec& spec, Rng& rng) {
  return spec.operand_min +
         static_cast<std::int64_t>(rng.next_below(
             static_cast<std::uint64_t>(spec.operand_max - spec.operand_min + 1)));
}

/// Left-to-right chain evaluation; nullopt on inexact division.
std::optional<std::int64_t> eval_chain(const std::vector<std::int64_t>& operands,
                                       const std::string& ops) {
  std::int64_t acc = operands.at(0);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const std::int64_t b = operands.at(i + 1);
    switch (ops[i]) {
      case '+': acc += b; break;
      case '-': acc -= b; break;
      case '*': acc *= b; break;
      case '/':
        if (b == 0 || acc % b != 0) return std::nullopt;
        acc /= b;
        break;
      default: return std::nullopt;
    }
  }
  return acc;
}

/// Independent re-parse of a rendered chain prompt, used as the generator's
/// emission self-check.
std::optional<std::int64_t> eval_prompt(const std::string& prompt) {
  std::vector<std::int64_t> operands;
  std::string op_chain;
  std::int64_t cur = 0;
  bool in_number = false;
  std::istringstream is(prompt);
  std::string tok;
  while (is >> tok) {
    if (tok.size() == 1 && std::isdigit(static_cast<unsigned char>(tok[0]))) {
      cur = cur * 10 + (tok[0] - '0');
      in_number = true;
      continue;
    }
    if (!in_number) return std::nullopt;
    operands.push_back(cur);
    cur = 0;
    in_number = false;
    if (tok.size() != 1) return std::nullopt;
    op_chain += tok[0];
  }
  if (!in_number) return std::nullopt;
  operands.push_back(cur);
  if (operands.size() != op_chain.size() + 1) return std::nullopt;
  return eval_chain(operands, op_chain);
}

Problem make_chain_problem(const GeneratorSpec& spec, Rng& rng, Domain domain,
                           const std::string& source, int index) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<std::int64_t> operands;
    std::string ops;
    for (int d = 0; d <= spec.depth; ++d) operands.push_back(rand_operand(spec, rng));
    for (int d = 0; d < spec.depth; ++d)
      ops += spec.ops[static_cast<std::size_t>(rng.next_below(spec.ops.size()))];
    const auto value = eval_chain(operands, ops);
    if (!value || std::abs(*value) > spec.answer_abs_max) continue;

    Problem p;
    p.domain = domain;
    p.id = to_string(domain) + "-" + std::to_string(spec.seed) + "-" + std::to_string(index);
    std::string prompt = digits_of(operands[0]);
    for (std::size_t i = 0; i < ops.size(); ++i)
      prompt += std::string(" ") + ops[i] + " " + digits_of(operands[i + 1]);
    p.prompt = prompt;
    p.gold = std::to_string(*value);
    p.source = source;
    attach_length_tag(p, spec, rng);

    // Emission self-checks: the prompt must evaluate back to the gold and
    // the boxed gold must verify against itself.
    const auto recheck = eval_prompt(p.prompt);
    if (!recheck || *recheck != *value)
      throw std::logic_error("gen_math: self-check failed for " + p.prompt);
    if (verify_math("\\boxed{" + p.gold + "}", p.gold) != 1.0)
      throw std::logic_error("gen_math: gold does not round-trip for " + p.prompt);
    return p;
  }
  throw std::runtime_error("gen_math: could not satisfy constraints; widen the knobs");
}

}  // namespace

std::vector<Problem> gen_math(const GeneratorSpec& spec) {
  validate(spec);
  Rng rng(sub_seed(spec.seed, 0x3A7));
  std::vector<Problem> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i)
    out.push_back(make_chain_problem(spec, rng, Domain::kMath, "gen_math", i));
  return out;
}

namespace {

// Random postfix program with strict stack discipline: depth operators,
// depth+1 leaves, at least one input reference.
std::vector<std::string> random_program(const GeneratorSpec& spec, Rng& rng, int input_count) {
  std::vector<std::string> prog;
  int stack = 0;
  int ops_left = spec.depth;
  int leaves_left = spec.depth + 1;
  bool has_input = false;
  while (ops_left > 0 || leaves_left > 0) {
    const bool can_op = stack >= 2 && ops_left > 0;
    const bool can_leaf = leaves_left > 0 && stack < leaves_left + 1;
    const bool emit_op = can_op && (!can_leaf || rng.next_double() < 0.5);
    if (emit_op) {
      prog.emplace_back(1, spec.ops[static_cast<std::size_t>(rng.next_below(spec.ops.size()))]);
      stack -= 1;
      ops_left -= 1;
    } else {
      if (!has_input || rng.next_double() < 0.7) {
        prog.push_back("x" + std::to_string(rng.next_below(static_cast<std::uint64_t>(input_count))));
        has_input = true;
      } else {
        prog.push_back(std::to_string(rng.next_below(10)));
      }
      stack += 1;
      leaves_left -= 1;
    }
  }
  return prog;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const std::string& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

std::vector<Problem> gen_code(const GeneratorSpec& spec) {
  validate(spec);
  Rng rng(sub_seed(spec.seed, 0xC0DE));
  const int input_count = 2;
  std::vector<Problem> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    Problem p;
    bool ok = false;
    for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
      const std::vector<std::string> prog = random_program(spec, rng, input_count);
      std::vector<TestCase> cases;
      bool all_pass = true;
      for (int c = 0; c < spec.test_case_count && all_pass; ++c) {
        TestCase tc;
        for (int j = 0; j < input_count; ++j) tc.input.push_back(rand_operand(spec, rng));
        const auto got = run_program(prog, tc);
        if (!got || std::abs(*got) > spec.answer_abs_max * 1000) {
          all_pass = false;
          break;
        }
        tc.expected_output = *got;
        cases.push_back(std::move(tc));
      }
      if (!all_pass) continue;
      p = Problem{};
      p.domain = Domain::kCode;
      p.id = "code-" + std::to_string(spec.seed) + "-" + std::to_string(i);
      p.prompt = digits_of(cases[0].input[0]) + " " + digits_of(cases[0].input[1]) + " " +
                 digits_of(cases[0].expected_output);
      p.tests = std::move(cases);
      p.source = "gen_code";
      p.tags.push_back("ref:" + join(prog));
      attach_length_tag(p, spec, rng);
      if (code_reward(prog, p.tests) != 1.0)
        throw std::logic_error("gen_code: reference program does not pass its own cases");
      ok = true;
    }
    if (!ok) throw std::runtime_error("gen_code: could not satisfy constraints; widen the knobs");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Problem> gen_science(const GeneratorSpec& spec) {
  validate(spec);
  Rng rng(sub_seed(spec.seed, 0x5C1));
  static const std::int64_t kFactors[] = {7, 24, 60, 100, 1000};
  std::vector<Problem> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    const std::int64_t v = rand_operand(spec, rng);
    const std::int64_t factor = kFactors[rng.next_below(std::size(kFactors))];
    Problem p;
    p.domain = Domain::kScience;
    p.id = "science-" + std::to_string(spec.seed) + "-" + std::to_string(i);
    p.prompt = digits_of(v) + " * " + digits_of(factor);
    p.gold = std::to_string(v * factor);
    p.source = "gen_science";
    p.tags.push_back("conv:" + std::to_string(factor));
    attach_length_tag(p, spec, rng);
    const auto recheck = eval_prompt(p.prompt);
    if (!recheck || *recheck != v * factor)
      throw std::logic_error("gen_science: self-check failed for " + p.prompt);
    if (verify_math("\\boxed{" + p.gold + "}", p.gold) != 1.0)
      throw std::logic_error("gen_science: gold does not round-trip");
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Problem> generate(const GeneratorSpec& spec) {
  switch (spec.domain) {
    case Domain::kMath: return gen_math(spec);
    case Domain::kCode: return gen_code(spec);
    case Domain::kScience: return gen_science(spec);
  }
  throw std::invalid_argument("generate: unknown domain");
}

}  // namespace c3po
