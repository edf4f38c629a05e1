#include "masking.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace haca {

std::vector<size_t> content_positions(std::span<const TokenId> caption, const Lexicon& lex) {
  std::vector<size_t> out;
  for (size_t i = 0; i < caption.size(); ++i) {
    const TokenId t = caption[i];
    if (!lex.contains(t)) {
      throw Error(ErrorCode::Data, "unknown token " + std::to_string(t) + " at position " + std::to_string(i));
    }
    if (lex.is_content(t)) out.push_back(i);
  }
  return out;
}

MaskedCaption mask_caption(std::span<const TokenId> caption, double ratio,
                           const Lexicon& lex, Rng& rng) {
  if (ratio < 0.0 || ratio > 1.0) {
    throw Error(ErrorCode::Usage, "mask ratio must be in [0, 1], got " + std::to_string(ratio));
  }

  MaskedCaption result;
  result.source.assign(caption.begin(), caption.end());
  result.masked = result.source;
  if (ratio == 0.0) return result;

  auto positions = content_positions(caption, lex);
  if (positions.empty()) {
    throw Error(ErrorCode::Data, "cannot mask a caption with no content words");
  }

  const auto c = static_cast<double>(positions.size());
  const auto k = std::max<size_t>(1, static_cast<size_t>(std::floor(ratio * c + 0.5)));

  // Partial Fisher-Yates over the content positions: first k entries are a
  // uniform sample without replacement.
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + static_cast<size_t>(rng.below(positions.size() - i));
    std::swap(positions[i], positions[j]);
  }
  result.masked_positions.assign(positions.begin(), positions.begin() + static_cast<long>(k));
  std::sort(result.masked_positions.begin(), result.masked_positions.end());
  for (size_t pos : result.masked_positions) result.masked[pos] = special::kMask;
  return result;
}

}  // namespace haca
