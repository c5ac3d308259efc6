#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c3po/rewards.hpp"

namespace c3po {

enum class LengthProfile { kShort, kHeavyTailed, kBimodal };

std::string to_string(LengthProfile p);
LengthProfile length_profile_from_string(const std::string& s);

/// Knobs for the synthetic problem generators. Every generator is a pure
/// function of its spec (seed included).
struct GeneratorSpec {
  Domain domain = Domain::kMath;
  int count = 1;
  std::uint64_t seed = 0;

  // difficulty knobs
  int operand_min = 0;
  int operand_max = 9;
  int depth = 1;  // number of operators in the expression chain
  std::string ops = "+-*";
  std::int64_t answer_abs_max = 99;
  int test_case_count = 3;  // code domain

  // response-length shaping: heavy_tailed and bimodal profiles attach a
  // "target_len:<n>" tag that the trainer uses as a per-problem rollout cap
  LengthProfile length_profile = LengthProfile::kShort;
  double pareto_alpha = 1.1;
  int target_len_min = 8;
  int target_len_max = 512;
};

/// Arithmetic chains ("a op b op c"), evaluated left to right, integer gold.
/// Division appears only when it stays exact. Every emitted problem is
/// re-evaluated from its own prompt and round-tripped through the verifier
/// before it leaves the generator.
std::vector<Problem> gen_math(const GeneratorSpec& spec);

/// Postfix programs over x0..x1 and digit literals. Each problem carries a
/// hidden reference program (tag "ref:<program>") and test cases produced by
/// executing it; problems whose reference fails any case are never emitted.
std::vector<Problem> gen_code(const GeneratorSpec& spec);

/// Unit-conversion style problems (value times a conversion factor), integer
/// gold, domain tag science.
std::vector<Problem> gen_science(const GeneratorSpec& spec);

std::vector<Problem> generate(const GeneratorSpec& spec);

}  // namespace c3po
