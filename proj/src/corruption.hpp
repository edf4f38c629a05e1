#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "worldgen.hpp"

namespace haca {

// Integer codes are the serialization contract; do not reorder.
enum class CorruptionKind : int32_t {
  ObjectSwap = 0,
  ActionSwap = 1,
  ModifierSwap = 2,
  AgentSwap = 3,
  CountRelationSwap = 4,
  HallucinationInsert = 5,
  EventOrderFlip = 6,
};

constexpr int kCorruptionKindCount = 7;

std::string_view corruption_kind_name(CorruptionKind kind);
CorruptionKind corruption_kind_from_name(std::string_view name);
std::array<CorruptionKind, kCorruptionKindCount> all_corruption_kinds();

// Self-describing edit: replacing span_len tokens at span_start with
// replacement_tokens turns the truth caption into the corrupted one.
struct CorruptionRecord {
  CorruptionKind kind = CorruptionKind::ObjectSwap;
  size_t span_start = 0;
  size_t span_len = 0;
  std::vector<TokenId> original_tokens;
  std::vector<TokenId> replacement_tokens;
};

struct CaptionPair {
  std::string video_id;
  std::vector<TokenId> truth;
  std::optional<std::vector<TokenId>> corrupted;
  std::optional<CorruptionRecord> corruption;
};

struct CorruptionResult {
  std::vector<TokenId> corrupted;
  CorruptionRecord record;
};

bool corruption_applicable(CorruptionKind kind, const VideoTrack& video);

// Produces a contrast caption that still parses but is contradicted by the
// video: swap replacements are drawn from the same class excluding every word
// of that class in the video's events; order/relation kinds rewrite structure.
// Throws CorruptionInapplicable when the kind cannot apply to this video.
CorruptionResult corrupt(std::span<const TokenId> truth, CorruptionKind kind,
                         const VideoTrack& video, const Lexicon& lex, Rng& rng);

// truth ⊕ record and corrupted ⊖ record.
std::vector<TokenId> apply_record(std::span<const TokenId> truth, const CorruptionRecord& record);
std::vector<TokenId> invert_record(std::span<const TokenId> corrupted, const CorruptionRecord& record);

// Sampled proportional to weights restricted to applicable kinds.
CorruptionKind sample_applicable_kind(const VideoTrack& video,
                                      std::span<const double> weights, Rng& rng);

struct BindingTest {
  std::string video_id;
  std::vector<TokenId> positive;
  std::vector<TokenId> negative;
  CorruptionKind category = CorruptionKind::ObjectSwap;
};

std::vector<BindingTest> build_binding_testset(const Corpus& corpus, Split split,
                                               std::span<const CorruptionKind> categories,
                                               int tests_per_category, Rng& rng);

void write_binding_tests_jsonl(std::span<const BindingTest> tests, const std::string& path);
std::vector<BindingTest> load_binding_tests_jsonl(const std::string& path);

}  // namespace haca
