#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace haca {

using TokenId = int32_t;

// Fixed ids, stable across all configurations.
namespace special {
constexpr TokenId kPad = 0;
constexpr TokenId kBos = 1;
constexpr TokenId kEos = 2;
constexpr TokenId kMask = 3;
constexpr TokenId kSep = 4;
constexpr TokenId kYes = 5;
constexpr TokenId kNo = 6;
constexpr int kCount = 7;
}  // namespace special

// Word-level vocabulary: specials, then the fixed function-word list (grammar
// glue plus every template word, so neither masking nor corruption can touch
// them), then the four content classes. Content words are procedural
// ("a0".."aN" agents, "v*" actions, "o*" objects, "m*" modifiers), which keeps
// id assignment stable for a given set of class sizes.
class Lexicon {
 public:
  static constexpr int kMinClassSize = 8;
  static constexpr int kTokensPerEvent = 4;

  static Lexicon build(int agents, int actions, int objects, int modifiers);

  int text_vocab_size() const { return static_cast<int>(words_.size()); }
  int visual_vocab_size() const { return visual_vocab_size_; }

  TokenId agents_begin() const { return agents_begin_; }
  TokenId actions_begin() const { return actions_begin_; }
  TokenId objects_begin() const { return objects_begin_; }
  TokenId modifiers_begin() const { return modifiers_begin_; }
  int agent_count() const { return actions_begin_ - agents_begin_; }
  int action_count() const { return objects_begin_ - actions_begin_; }
  int object_count() const { return modifiers_begin_ - objects_begin_; }
  int modifier_count() const { return text_vocab_size() - modifiers_begin_; }

  bool is_special(TokenId t) const { return t >= 0 && t < special::kCount; }
  bool is_function(TokenId t) const { return t >= special::kCount && t < agents_begin_; }
  bool is_agent(TokenId t) const { return t >= agents_begin_ && t < actions_begin_; }
  bool is_action(TokenId t) const { return t >= actions_begin_ && t < objects_begin_; }
  bool is_object(TokenId t) const { return t >= objects_begin_ && t < modifiers_begin_; }
  bool is_modifier(TokenId t) const { return t >= modifiers_begin_ && t < text_vocab_size(); }
  bool is_content(TokenId t) const { return t >= agents_begin_ && t < text_vocab_size(); }
  bool contains(TokenId t) const { return t >= 0 && t < text_vocab_size(); }

  const std::string& word(TokenId t) const;
  TokenId id(std::string_view word) const;  // throws on unknown word

  // Visual feature-token space (disjoint from text ids by construction; these
  // index the frozen visual embedding table).
  TokenId visual_for_agent(TokenId agent) const;
  TokenId visual_for_action(TokenId action) const;
  TokenId visual_for_object(TokenId object) const;
  TokenId visual_for_modifier(TokenId modifier) const;
  TokenId visual_no_modifier() const { return visual_vocab_size_ - 1; }

  // Splits on whitespace with , . ? : as standalone tokens; used for template
  // definitions and tests.
  std::vector<TokenId> tokenize(std::string_view text) const;
  // Inverse rendering; punctuation attaches to the preceding word.
  std::string render(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId agents_begin_ = 0;
  TokenId actions_begin_ = 0;
  TokenId objects_begin_ = 0;
  TokenId modifiers_begin_ = 0;
  int visual_vocab_size_ = 0;
};

}  // namespace haca
