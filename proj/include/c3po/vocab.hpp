#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace c3po {

/// Fixed token alphabet shared by the policy, the verifiers and the task
/// generators. Token ids are dense 0..size()-1 in construction order.
///
/// Required special tokens: exactly one end-of-sequence marker and the two
/// (distinct) boxed-answer delimiters.
class Vocabulary {
 public:
  static constexpr const char* kEos = "<eos>";
  static constexpr const char* kBoxOpen = "\\boxed{";
  static constexpr const char* kBoxClose = "}";

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  /// digits, + - * /, boxed delimiters, eos. V = 17.
  static Vocabulary math_min();
  /// math_min plus input references x0..x9. V = 27.
  static Vocabulary full();
  static Vocabulary preset(const std::string& name);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& token) const;      // throws on unknown token
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  int eos_id() const { return eos_id_; }
  int box_open_id() const { return box_open_id_; }
  int box_close_id() const { return box_close_id_; }

  /// Whitespace-split text into token ids; every piece must be in the
  /// vocabulary.
  std::vector<int> tokenize(const std::string& text) const;

  /// Space-joined token strings. The end-of-sequence token is omitted.
  std::string render(const std::vector<int>& ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int eos_id_ = -1;
  int box_open_id_ = -1;
  int box_close_id_ = -1;
};

}  // namespace c3po
