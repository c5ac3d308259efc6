#include "c3po/rewards.hpp"

#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace c3po {

std::string to_string(Domain d) {
  switch (d) {
    case Domain::kMath: return "math";
    case Domain::kCode: return "code";
    case Domain::kScience: return "science";
  }
  throw std::logic_error("to_string: bad Domain");
}

Domain domain_from_string(const std::string& s) {
  if (s == "math") return Domain::kMath;
  if (s == "code") return Domain::kCode;
  if (s == "science") return Domain::kScience;
  throw std::invalid_argument("unknown domain '" + s + "'");
}

std::optional<std::string> Problem::tag_value(const std::string& key) const {
  const std::string prefix = key + ":";
  for (const std::string& t : tags)
    if (t.rfind(prefix, 0) == 0) return t.substr(prefix.size());
  return std::nullopt;
}

std::optional<std::string> extract_boxed(const std::string& text) {
  static const std::string open = "\\boxed{";
  std::optional<std::string> last;
  std::size_t pos = 0;
  while ((pos = text.find(open, pos)) != std::string::npos) {
    const std::size_t start = pos + open.size();
    const std::size_t close = text.find('}', start);
    if (close == std::string::npos) break;  // incomplete span; earlier complete one stands
    std::string inner = text.substr(start, close - start);
    const auto a = inner.find_first_not_of(" \t\r\n");
    const auto b = inner.find_last_not_of(" \t\r\n");
    last = (a == std::string::npos) ? std::string() : inner.substr(a, b - a + 1);
    pos = close + 1;
  }
  return last;
}

namespace {

bool parse_integer(const std::string& s, long long& out) {
  if (s.empty()) return false;
  std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (std::size_t k = i; k < s.size(); ++k)
    if (!std::isdigit(static_cast<unsigned char>(s[k]))) return false;
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) return false;
  out = v;
  return true;
}

std::string integer_string(long long v) { return std::to_string(v); }

}  // namespace

std::string normalize_answer(const std::string& raw) {
  std::string s;
  for (char c : raw)
    if (!std::isspace(static_cast<unsigned char>(c))) s += c;

  long long v;
  if (parse_integer(s, v)) return integer_string(v);

  const std::size_t slash = s.find('/');
  if (slash != std::string::npos && slash == s.rfind('/')) {
    long long num, den;
    if (parse_integer(s.substr(0, slash), num) && parse_integer(s.substr(slash + 1), den) &&
        den != 0) {
      if (den < 0) {
        num = -num;
        den = -den;
      }
      const long long g = std::gcd(num < 0 ? -num : num, den);
      if (g > 0) {
        num /= g;
        den /= g;
      }
      if (den == 1 || num == 0) return integer_string(num == 0 ? 0 : num);
      return integer_string(num) + "/" + integer_string(den);
    }
  }
  return s;
}

double verify_math(const std::string& response_text, const std::string& gold) {
  if (gold.empty()) throw std::invalid_argument("verify_math: empty gold answer");
  const auto boxed = extract_boxed(response_text);
  if (!boxed) return 0.0;
  return normalize_answer(*boxed) == normalize_answer(gold) ? 1.0 : 0.0;
}

std::optional<std::int64_t> run_program(const std::vector<std::string>& tokens,
                                        const TestCase& testcase, int step_limit) {
  if (tokens.empty() || static_cast<int>(tokens.size()) > step_limit) return std::nullopt;
  std::vector<std::int64_t> stack;
  stack.reserve(tokens.size());
  for (const std::string& tok : tokens) {
    if (tok.size() >= 2 && tok[0] == 'x' && tok.size() <= 3) {
      long long idx;
      if (!parse_integer(tok.substr(1), idx) || idx < 0 ||
          idx >= static_cast<long long>(testcase.input.size()))
        return std::nullopt;
      stack.push_back(testcase.input[static_cast<std::size_t>(idx)]);
      continue;
    }
    long long lit;
    if (parse_integer(tok, lit)) {
      stack.push_back(lit);
      continue;
    }
    if (tok.size() == 1 && (tok[0] == '+' || tok[0] == '-' || tok[0] == '*' || tok[0] == '/')) {
      if (stack.size() < 2) return std::nullopt;
      const std::int64_t b = stack.back();
      stack.pop_back();
      const std::int64_t a = stack.back();
      stack.pop_back();
      std::int64_t r = 0;
      switch (tok[0]) {
        case '+':
          if (__builtin_add_overflow(a, b, &r)) return std::nullopt;
          break;
        case '-':
          if (__builtin_sub_overflow(a, b, &r)) return std::nullopt;
          break;
        case '*':
          if (__builtin_mul_overflow(a, b, &r)) return std::nullopt;
          break;
        case '/':
          if (b == 0 || (a == INT64_MIN && b == -1)) return std::nullopt;
          r = a / b;  // truncating integer division
          break;
      }
      stack.push_back(r);
      continue;
    }
    return std::nullopt;  // token outside the DSL subset
  }
  if (stack.size() != 1) return std::nullopt;
  return stack.back();
}

double code_reward(const std::vector<std::string>& tokens,
                   const std::vector<TestCase>& testcases) {
  if (testcases.empty()) throw std::invalid_argument("code_reward: needs at least one test case");
  for (const TestCase& tc : testcases) {
    const auto got = run_program(tokens, tc);
    if (!got || *got != tc.expected_output) return 0.0;
  }
  return 1.0;
}

double reward(const std::string& response_text, const Problem& problem) {
  switch (problem.domain) {
    case Domain::kMath:
    case Domain::kScience:
      return verify_math(response_text, problem.gold);
    case Domain::kCode: {
      std::vector<std::string> tokens;
      std::istringstream is(response_text);
      std::string tok;
      while (is >> tok) tokens.push_back(tok);
      return code_reward(tokens, problem.tests);
    }
  }
  throw std::invalid_argument("reward: unknown domain");
}

namespace {

using nlohmann::json;

const char* const kProblemKeys[] = {"id", "domain", "prompt", "gold", "tests",
                                    "difficulty", "tags", "source"};

}  // namespace

std::string problem_to_json_line(const Problem& p) {
  json j;
  j["id"] = p.id;
  j["domain"] = to_string(p.domain);
  j["prompt"] = p.prompt;
  if (p.domain == Domain::kCode) {
    json tests = json::array();
    for (const TestCase& tc : p.tests) tests.push_back({{"input", tc.input}, {"expected", tc.expected_output}});
    j["tests"] = tests;
  } else {
    j["gold"] = p.gold;
  }
  if (p.difficulty) j["difficulty"] = *p.difficulty;
  if (!p.tags.empty()) j["tags"] = p.tags;
  if (!p.source.empty()) j["source"] = p.source;
  return j.dump();
}

Problem problem_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  if (!j.is_object()) throw std::invalid_argument("dataset record is not an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* k : kProblemKeys) known = known || key == k;
    if (!known) throw std::invalid_argument("dataset record has unknown field '" + key + "'");
  }
  Problem p;
  p.id = j.at("id").get<std::string>();
  p.domain = domain_from_string(j.at("domain").get<std::string>());
  p.prompt = j.at("prompt").get<std::string>();
  if (p.domain == Domain::kCode) {
    for (const json& t : j.at("tests")) {
      TestCase tc;
      tc.input = t.at("input").get<std::vector<std::int64_t>>();
      tc.expected_output = t.at("expected").get<std::int64_t>();
      p.tests.push_back(std::move(tc));
    }
  } else {
    p.gold = j.at("gold").get<std::string>();
  }
  if (j.contains("difficulty")) p.difficulty = j.at("difficulty").get<double>();
  if (j.contains("tags")) p.tags = j.at("tags").get<std::vector<std::string>>();
  if (j.contains("source")) p.source = j.at("source").get<std::string>();
  return p;
}

std::vector<Problem> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<Problem> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(problem_from_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<Problem>& problems) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const Problem& p : problems) out << problem_to_json_line(p) << '\n';
}

}  // namespace c3po
