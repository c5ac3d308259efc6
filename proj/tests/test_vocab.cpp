#include <doctest.h>

#include "c3po/vocab.hpp"

using namespace c3po;

TEST_CASE("presets carry dense ids and the special tokens") {
  const Vocabulary v = Vocabulary::math_min();
  CHECK(v.size() == 17);
  for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
  CHECK(v.eos_id() >= 0);
  CHECK(v.box_open_id() >= 0);
  CHECK(v.box_close_id() >= 0);
  CHECK(v.box_open_id() != v.box_close_id());

  CHECK(Vocabulary::full().size() == 27);
  CHECK_THROWS(Vocabulary::preset("nope"));
}

TEST_CASE("construction rejects malformed alphabets") {
  CHECK_THROWS(Vocabulary({"a", "b"}));  // no eos / box tokens
  CHECK_THROWS(Vocabulary({"a", "a", Vocabulary::kEos, Vocabulary::kBoxOpen,
                           Vocabulary::kBoxClose}));  // duplicate
}

TEST_CASE("tokenize and render round-trip") {
  const Vocabulary v = Vocabulary::math_min();
  const auto ids = v.tokenize("3 + 4");
  CHECK(ids.size() == 3);
  CHECK(v.render(ids) == "3 + 4");
  CHECK_THROWS(v.tokenize("3 plus 4"));

  // eos is omitted from rendered text
  auto with_eos = ids;
  with_eos.push_back(v.eos_id());
  CHECK(v.render(with_eos) == "3 + 4");
}
