#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lexicon.hpp"
#include "rng.hpp"

namespace haca {

struct Event {
  TokenId agent = 0;
  TokenId action = 0;
  TokenId object = 0;
  std::optional<TokenId> modifier;

  auto operator<=>(const Event&) const = default;
};

struct VideoTrack {
  std::string video_id;
  std::vector<Event> events;                // 1..3, ordered
  std::vector<TokenId> feature_tokens;      // deterministic rendering of events
};

enum class Split : int { Train = 0, Val = 1, Test = 2 };

const char* split_name(Split s);
Split split_from_name(std::string_view name);

struct VideoRecord {
  VideoTrack video;
  std::vector<TokenId> truth;               // ground-truth caption
  Split split = Split::Train;
};

struct GenConfig {
  int agents = 12;
  int actions = 16;
  int objects = 12;
  int modifiers = 8;
  int videos = 900;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  // Fraction of (agent, action) pairs reserved for the test split so held-out
  // evaluation probes unseen compositions.
  double test_pair_fraction = 0.25;
  int min_events = 1;
  int max_events = 3;
  double modifier_prob = 0.5;
};

struct Corpus {
  GenConfig config;
  Lexicon lexicon;
  std::vector<VideoRecord> records;
  // (agent, action) pair partition; filled by generate_corpus, empty on load.
  std::vector<std::pair<TokenId, TokenId>> train_pairs;
  std::vector<std::pair<TokenId, TokenId>> test_pairs;

  std::vector<size_t> split_indices(Split s) const;
  const VideoRecord* find(std::string_view video_id) const;
};

Lexicon build_lexicon(const GenConfig& config);

// Visual feature tokens: a fixed-width block per event (agent, action,
// object, modifier-or-filler), injective over event lists.
std::vector<TokenId> render_features(std::span<const Event> events, const Lexicon& lex);

// Events drawn without (agent, action) duplication inside one video.
VideoTrack sample_video(const Lexicon& lex, int n_events, Rng& rng, double modifier_prob = 0.5);
VideoTrack sample_video_from_pairs(const Lexicon& lex, int n_events,
                                   std::span<const std::pair<TokenId, TokenId>> pair_pool,
                                   double modifier_prob, Rng& rng);

// Per event: "the <agent> <action> the <object> [<modifier>]", clauses joined
// with "then".
std::vector<TokenId> render_caption(const VideoTrack& video, const Lexicon& lex);
std::vector<TokenId> render_caption(std::span<const Event> events, const Lexicon& lex);

struct ParsedCaption {
  std::vector<Event> events;
  std::vector<TokenId> connectives;  // one per clause boundary
};

// Inverse of render_caption on uncorrupted captions; throws ParseError with
// the first offending position otherwise.
ParsedCaption parse_caption(std::span<const TokenId> caption, const Lexicon& lex);

// Ground-truth entailment oracle: caption parses, events match the video's
// exactly and in order, and all connectives are the sequential "then".
bool caption_matches_video(std::span<const TokenId> caption, const VideoTrack& video,
                           const Lexicon& lex);

Corpus generate_corpus(const GenConfig& config, Rng& rng);

// Line-delimited records {video_id, feature_tokens, truth_caption, split}.
void write_corpus_jsonl(const Corpus& corpus, const std::string& path);
Corpus load_corpus_jsonl(const GenConfig& config, const std::string& path);

}  // namespace haca
