#include "worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "error.hpp"
#include "json.hpp"

namespace haca {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw Error(ErrorCode::Internal, "bad split");
}

Split split_from_name(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(ErrorCode::Data, "unknown split name: " + std::string(name));
}

std::vector<size_t> Corpus::split_indices(Split s) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == s) out.push_back(i);
  }
  return out;
}

const VideoRecord* Corpus::find(std::string_view video_id) const {
  for (const auto& r : records) {
    if (r.video.video_id == video_id) return &r;
  }
  return nullptr;
}

Lexicon build_lexicon(const GenConfig& config) {
  return Lexicon::build(config.agents, config.actions, config.objects, config.modifiers);
}

std::vector<TokenId> render_features(std::span<const Event> events, const Lexicon& lex) {
  std::vector<TokenId> out;
  out.reserve(events.size() * Lexicon::kTokensPerEvent);
  for (const Event& e : events) {
    out.push_back(lex.visual_for_agent(e.agent));
    out.push_back(lex.visual_for_action(e.action));
    out.push_back(lex.visual_for_object(e.object));
    out.push_back(e.modifier ? lex.visual_for_modifier(*e.modifier) : lex.visual_no_modifier());
  }
  return out;
}

VideoTrack sample_video_from_pairs(const Lexicon& lex, int n_events,
                                   std::span<const std::pair<TokenId, TokenId>> pair_pool,
                                   double modifier_prob, Rng& rng) {
  if (n_events < 1 || n_events > 3) {
    throw Error(ErrorCode::Usage, "n_events must be in [1, 3], got " + std::to_string(n_events));
  }
  if (pair_pool.size() < static_cast<size_t>(n_events)) {
    throw Error(ErrorCode::Data, "pair pool too small for " + std::to_string(n_events) + " events");
  }

  VideoTrack video;
  std::vector<size_t> used;
  for (int i = 0; i < n_events; ++i) {
    size_t pick;
    do {
      pick = static_cast<size_t>(rng.below(pair_pool.size()));
    } while (std::find(used.begin(), used.end(), pick) != used.end());
    used.push_back(pick);

    Event e;
    e.agent = pair_pool[pick].first;
    e.action = pair_pool[pick].second;
    e.object = lex.objects_begin() + static_cast<TokenId>(rng.below(lex.object_count()));
    if (rng.real01() < modifier_prob) {
      e.modifier = lex.modifiers_begin() + static_cast<TokenId>(rng.below(lex.modifier_count()));
    }
    video.events.push_back(e);
  }
  video.feature_tokens = render_features(video.events, lex);
  return video;
}

VideoTrack sample_video(const Lexicon& lex, int n_events, Rng& rng, double modifier_prob) {
  std::vector<std::pair<TokenId, TokenId>> all_pairs;
  all_pairs.reserve(static_cast<size_t>(lex.agent_count()) * lex.action_count());
  for (int a = 0; a < lex.agent_count(); ++a) {
    for (int v = 0; v < lex.action_count(); ++v) {
      all_pairs.emplace_back(lex.agents_begin() + a, lex.actions_begin() + v);
    }
  }
  return sample_video_from_pairs(lex, n_events, all_pairs, modifier_prob, rng);
}

std::vector<TokenId> render_caption(std::span<const Event> events, const Lexicon& lex) {
  const TokenId the = lex.id("the");
  const TokenId then = lex.id("then");
  std::vector<TokenId> out;
  for (size_t i = 0; i < events.size(); ++i) {
    if (i > 0) out.push_back(then);
    const Event& e = events[i];
    out.push_back(the);
    out.push_back(e.agent);
    out.push_back(e.action);
    out.push_back(the);
    out.push_back(e.object);
    if (e.modifier) out.push_back(*e.modifier);
  }
  return out;
}

std::vector<TokenId> render_caption(const VideoTrack& video, const Lexicon& lex) {
  return render_caption(video.events, lex);
}

ParsedCaption parse_caption(std::span<const TokenId> caption, const Lexicon& lex) {
  const TokenId the = lex.id("the");
  const TokenId then = lex.id("then");
  const TokenId meanwhile = lex.id("meanwhile");

  ParsedCaption parsed;
  size_t pos = 0;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) {
      throw ParseError(pos, std::string("expected ") + what + " at position " + std::to_string(pos));
    }
  };

  while (true) {
    expect(pos < caption.size() && caption[pos] == the, "'the'");
    ++pos;
    expect(pos < caption.size() && lex.is_agent(caption[pos]), "agent word");
    Event e;
    e.agent = caption[pos++];
    expect(pos < caption.size() && lex.is_action(caption[pos]), "action word");
    e.action = caption[pos++];
    expect(pos < caption.size() && caption[pos] == the, "'the'");
    ++pos;
    expect(pos < caption.size() && lex.is_object(caption[pos]), "object word");
    e.object = caption[pos++];
    if (pos < caption.size() && lex.is_modifier(caption[pos])) {
      e.modifier = caption[pos++];
    }
    parsed.events.push_back(e);

    if (pos == caption.size()) break;
    expect(caption[pos] == then || caption[pos] == meanwhile, "connective");
    parsed.connectives.push_back(caption[pos]);
    ++pos;
  }
  return parsed;
}

bool caption_matches_video(std::span<const TokenId> caption, const VideoTrack& video,
                           const Lexicon& lex) {
  ParsedCaption parsed;
  try {
    parsed = parse_caption(caption, lex);
  } catch (const ParseError&) {
    return false;
  }
  if (parsed.events != video.events) return false;
  const TokenId then = lex.id("then");
  for (TokenId c : parsed.connectives) {
    if (c != then) return false;
  }
  return true;
}

Corpus generate_corpus(const GenConfig& config, Rng& rng) {
  const double frac_sum = config.train_fraction + config.val_fraction + config.test_fraction;
  if (std::abs(frac_sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::Usage, "split fractions must sum to 1, got " + std::to_string(frac_sum));
  }
  if (config.videos < 1) throw Error(ErrorCode::Usage, "videos must be >= 1");
  if (config.min_events < 1 || config.max_events > 3 || config.min_events > config.max_events) {
    throw Error(ErrorCode::Usage, "event count range must satisfy 1 <= min <= max <= 3");
  }

  Corpus corpus;
  corpus.config = config;
  corpus.lexicon = build_lexicon(config);
  const Lexicon& lex = corpus.lexicon;

  // Partition (agent, action) pairs so the test split only ever uses
  // combinations absent from train and val.
  std::vector<std::pair<TokenId, TokenId>> pairs;
  for (int a = 0; a < lex.agent_count(); ++a) {
    for (int v = 0; v < lex.action_count(); ++v) {
      pairs.emplace_back(lex.agents_begin() + a, lex.actions_begin() + v);
    }
  }
  Rng pair_rng = rng.child("pair-partition");
  pair_rng.shuffle(pairs);
  const auto n_test_pairs = static_cast<size_t>(std::llround(config.test_pair_fraction * static_cast<double>(pairs.size())));
  corpus.test_pairs.assign(pairs.begin(), pairs.begin() + static_cast<long>(n_test_pairs));
  corpus.train_pairs.assign(pairs.begin() + static_cast<long>(n_test_pairs), pairs.end());
  const auto& test_pairs = corpus.test_pairs;
  const auto& train_pairs = corpus.train_pairs;
  if (test_pairs.size() < static_cast<size_t>(config.max_events) ||
      train_pairs.size() < static_cast<size_t>(config.max_events)) {
    throw Error(ErrorCode::Data,
                "infeasible (agent, action) disjointness: " + std::to_string(train_pairs.size()) +
                    " train pairs / " + std::to_string(test_pairs.size()) + " test pairs");
  }

  const auto n_train = static_cast<size_t>(std::llround(config.train_fraction * config.videos));
  const auto n_val = static_cast<size_t>(std::llround(config.val_fraction * config.videos));
  if (n_train + n_val > static_cast<size_t>(config.videos)) {
    throw Error(ErrorCode::Usage, "split fractions produce negative test count");
  }

  const int span = config.max_events - config.min_events + 1;
  for (size_t i = 0; i < static_cast<size_t>(config.videos); ++i) {
    // Child seed per index: examples are independent of generation order.
    Rng item_rng = rng.child(i);
    const Split split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    const auto& pool = split == Split::Test ? test_pairs : train_pairs;
    const int n_events = config.min_events + static_cast<int>(item_rng.below(static_cast<uint64_t>(span)));

    VideoRecord rec;
    rec.split = split;
    rec.video = sample_video_from_pairs(lex, n_events, pool, config.modifier_prob, item_rng);
    char id[16];
    std::snprintf(id, sizeof(id), "v%05zu", i);
    rec.video.video_id = id;
    rec.truth = render_caption(rec.video, lex);
    if (parse_caption(rec.truth, lex).events != rec.video.events) {
      throw Error(ErrorCode::Internal, "caption round-trip failed during generation");
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

void write_corpus_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Data, "cannot open for writing: " + path);
  for (const auto& rec : corpus.records) {
    json j{{"video_id", rec.video.video_id},
           {"feature_tokens", rec.video.feature_tokens},
           {"truth_caption", rec.truth},
           {"split", split_name(rec.split)}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::Data, "write failed: " + path);
}

Corpus load_corpus_jsonl(const GenConfig& config, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Data, "cannot open corpus file: " + path);

  Corpus corpus;
  corpus.config = config;
  corpus.lexicon = build_lexicon(config);

  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Data, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    VideoRecord rec;
    rec.video.video_id = j.at("video_id").get<std::string>();
    rec.video.feature_tokens = j.at("feature_tokens").get<std::vector<TokenId>>();
    rec.truth = j.at("truth_caption").get<std::vector<TokenId>>();
    rec.split = split_from_name(j.at("split").get<std::string>());
    rec.video.events = parse_caption(rec.truth, corpus.lexicon).events;
    if (render_features(rec.video.events, corpus.lexicon) != rec.video.feature_tokens) {
      throw Error(ErrorCode::Data,
                  path + ":" + std::to_string(line_no) + ": feature tokens do not match caption");
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace haca
