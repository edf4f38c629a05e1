#pragma once

#include <span>
#include <vector>

#include "lexicon.hpp"
#include "rng.hpp"

namespace haca {

struct MaskedCaption {
  std::vector<TokenId> masked;
  std::vector<TokenId> source;
  std::vector<size_t> masked_positions;  // sorted, all content positions
};

// Indices of content words: everything outside function words and specials.
std::vector<size_t> content_positions(std::span<const TokenId> caption, const Lexicon& lex);

// Masks k = max(1, round(ratio * content_count)) content words (k = 0 when
// ratio == 0), positions drawn uniformly without replacement. Round half up.
MaskedCaption mask_caption(std::span<const TokenId> caption, double ratio,
                           const Lexicon& lex, Rng& rng);

}  // namespace haca
