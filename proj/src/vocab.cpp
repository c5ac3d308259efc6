#include "c3po/vocab.hpp"

#include <sstream>
#include <stdexcept>

namespace c3po {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
    const std::string& t = tokens_[static_cast<std::size_t>(i)];
    if (t.empty()) throw std::invalid_argument("Vocabulary: empty token at id " + std::to_string(i));
    if (!ids_.emplace(t, i).second)
      throw std::invalid_argument("Vocabulary: duplicate token '" + t + "'");
    if (t == kEos) eos_id_ = i;
    if (t == kBoxOpen) box_open_id_ = i;
    if (t == kBoxClose) box_close_id_ = i;
  }
  if (eos_id_ < 0) throw std::invalid_argument("Vocabulary: missing end-of-sequence token");
  if (box_open_id_ < 0 || box_close_id_ < 0)
    throw std::invalid_argument("Vocabulary: missing boxed-answer delimiters");
  if (box_open_id_ == box_close_id_)
    throw std::invalid_argument("Vocabulary: boxed-answer delimiters must be distinct");
}

Vocabulary Vocabulary::math_min() {
  std::vector<std::string> t;
  for (char d = '0'; d <= '9'; ++d) t.emplace_back(1, d);
  t.insert(t.end(), {"+", "-", "*", "/", kBoxOpen, kBoxClose, kEos});
  return Vocabulary(std::move(t));
}

Vocabulary Vocabulary::full() {
  std::vector<std::string> t;
  for (char d = '0'; d <= '9'; ++d) t.emplace_back(1, d);
  t.insert(t.end(), {"+", "-", "*", "/"});
  for (int i = 0; i < 10; ++i) t.push_back("x" + std::to_string(i));
  t.insert(t.end(), {kBoxOpen, kBoxClose, kEos});
  return Vocabulary(std::move(t));
}

Vocabulary Vocabulary::preset(const std::string& name) {
  if (name == "math_min") return math_min();
  if (name == "full") return full();
  throw std::invalid_argument("Vocabulary: unknown preset '" + name + "'");
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw std::invalid_argument("Vocabulary: unknown token '" + token + "'");
  return it->second;
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> out;
  std::istringstream is(text);
  std::string piece;
  while (is >> piece) out.push_back(id(piece));
  return out;
}

std::string Vocabulary::render(const std::vector<int>& ids) const {
  std::string out;
  for (int tid : ids) {
    if (tid == eos_id_) continue;
    if (!out.empty()) out += ' ';
    out += token(tid);
  }
  return out;
}

}  // namespace c3po
