#include "lexicon.hpp"

#include <cctype>

#include "error.hpp"

namespace haca {
namespace {

const char* kSpecialWords[special::kCount] = {
    "<pad>", "<bos>", "<eos>", "[MASK]", "<sep>", "Yes", "No",
};

// Grammar glue plus the union of all template words. Order is fixed; ids of
// these words never depend on content-class sizes.
const char* kFunctionWords[] = {
    "the", "then", "meanwhile",
    "Does", "this", "This", "caption", "Caption", "accurately",
    "describe", "describes", "video", "shall", "be", "corrected", "as",
    "Please", "correct", "to",
    ",", ".", "?", ":",
};

bool is_punct_token(const std::string& w) {
  return w == "," || w == "." || w == "?" || w == ":";
}

}  // namespace

Lexicon Lexicon::build(int agents, int actions, int objects, int modifiers) {
  const struct {
    const char* name;
    int size;
  } classes[] = {{"agents", agents}, {"actions", actions}, {"objects", objects}, {"modifiers", modifiers}};
  for (const auto& c : classes) {
    if (c.size < kMinClassSize) {
      throw Error(ErrorCode::Usage,
                  std::string("lexicon class '") + c.name + "' has size " +
                      std::to_string(c.size) + ", minimum is " + std::to_string(kMinClassSize));
    }
  }

  Lexicon lex;
  for (const char* w : kSpecialWords) lex.words_.emplace_back(w);
  for (const char* w : kFunctionWords) lex.words_.emplace_back(w);

  lex.agents_begin_ = static_cast<TokenId>(lex.words_.size());
  for (int i = 0; i < agents; ++i) lex.words_.push_back("a" + std::to_string(i));
  lex.actions_begin_ = static_cast<TokenId>(lex.words_.size());
  for (int i = 0; i < actions; ++i) lex.words_.push_back("v" + std::to_string(i));
  lex.objects_begin_ = static_cast<TokenId>(lex.words_.size());
  for (int i = 0; i < objects; ++i) lex.words_.push_back("o" + std::to_string(i));
  lex.modifiers_begin_ = static_cast<TokenId>(lex.words_.size());
  for (int i = 0; i < modifiers; ++i) lex.words_.push_back("m" + std::to_string(i));

  for (size_t i = 0; i < lex.words_.size(); ++i) {
    auto [it, inserted] = lex.index_.emplace(lex.words_[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw Error(ErrorCode::Internal, "duplicate word in lexicon: " + lex.words_[i]);
    }
  }

  // One visual token per content word plus a filler for "no modifier".
  lex.visual_vocab_size_ = agents + actions + objects + modifiers + 1;
  return lex;
}

const std::string& Lexicon::word(TokenId t) const {
  if (!contains(t)) {
    throw Error(ErrorCode::Data, "token id out of range: " + std::to_string(t));
  }
  return words_[static_cast<size_t>(t)];
}

TokenId Lexicon::id(std::string_view w) const {
  auto it = index_.find(std::string(w));
  if (it == index_.end()) {
    throw Error(ErrorCode::Data, "unknown word: '" + std::string(w) + "'");
  }
  return it->second;
}

TokenId Lexicon::visual_for_agent(TokenId agent) const {
  if (!is_agent(agent)) throw Error(ErrorCode::Data, "not an agent token");
  return agent - agents_begin_;
}

TokenId Lexicon::visual_for_action(TokenId action) const {
  if (!is_action(action)) throw Error(ErrorCode::Data, "not an action token");
  return agent_count() + (action - actions_begin_);
}

TokenId Lexicon::visual_for_object(TokenId object) const {
  if (!is_object(object)) throw Error(ErrorCode::Data, "not an object token");
  return agent_count() + action_count() + (object - objects_begin_);
}

TokenId Lexicon::visual_for_modifier(TokenId modifier) const {
  if (!is_modifier(modifier)) throw Error(ErrorCode::Data, "not a modifier token");
  return agent_count() + action_count() + object_count() + (modifier - modifiers_begin_);
}

std::vector<TokenId> Lexicon::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(id(cur));
      cur.clear();
    }
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else if (ch == ',' || ch == '.' || ch == '?' || ch == ':') {
      flush();
      out.push_back(id(std::string_view(&ch, 1)));
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

std::string Lexicon::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    const std::string& w = word(t);
    if (!out.empty() && !is_punct_token(w)) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace haca
