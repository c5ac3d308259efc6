#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace c3po {

enum class Domain { kMath, kCode, kScience };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct TestCase {
  std::vector<std::int64_t> input;
  std::int64_t expected_output = 0;
};

/// A verifiable task record. Math/science problems carry a canonical answer
/// string in `gold`; code problems carry test cases instead.
struct Problem {
  std::string id;
  Domain domain = Domain::kMath;
  std::string prompt;
  std::string gold;
  std::vector<TestCase> tests;
  std::optional<double> difficulty;
  std::vector<std::string> tags;
  std::string source;

  /// Value of a "key:value" tag, if present.
  std::optional<std::string> tag_value(const std::string& key) const;
};

/// Contents of the last complete \boxed{...} span, surrounding whitespace
/// stripped; nullopt when no complete span exists. Spans end at the first
/// closing brace (no nesting).
std::optional<std::string> extract_boxed(const std::string& text);

/// Canonical answer form: all whitespace removed, integers stripped of signs
/// and leading zeros, integer fractions reduced (sign on the numerator,
/// denominator 1 collapses to the integer). Anything else is returned with
/// whitespace removed, otherwise untouched.
std::string normalize_answer(const std::string& raw);

/// 1 iff the last boxed answer normalizes to the same form as `gold`.
/// No box, or a mismatch, scores 0; there is no format-shaped partial credit.
double verify_math(const std::string& response_text, const std::string& gold);

/// Postfix-expression interpreter over integer literals, input references
/// x0..x9 and + - * /. Evaluation runs against testcase.input under a step
/// limit. Any failure (unknown token, stack underflow, division by zero,
/// leftover operands, overflow, step-limit breach) yields nullopt.
std::optional<std::int64_t> run_program(const std::vector<std::string>& tokens,
                                        const TestCase& testcase, int step_limit = 256);

/// Sparse all-or-nothing verdict: 1 iff the program matches expected_output
/// on every test case.
double code_reward(const std::vector<std::string>& tokens, const std::vector<TestCase>& testcases);

/// Domain dispatch. Math/science verify the boxed answer; code treats the
/// whitespace-split response as the program.
double reward(const std::string& response_text, const Problem& problem);

// Dataset line-record format: one JSON object per line, UTF-8. See README
// for the field table.
std::string problem_to_json_line(const Problem& p);
Problem problem_from_json_line(const std::string& line);
std::vector<Problem> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<Problem>& problems);

}  // namespace c3po
