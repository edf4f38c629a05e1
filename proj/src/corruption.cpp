#include "corruption.hpp"

#include <algorithm>
#include <fstream>

#include "error.hpp"
#include "json.hpp"

namespace haca {

using nlohmann::json;

namespace {

const char* kKindNames[kCorruptionKindCount] = {
    "object_swap", "action_swap", "modifier_swap", "agent_swap",
    "count_relation_swap", "hallucination_insert", "event_order_flip",
};

// Token positions of one clause inside a caption.
struct ClauseLayout {
  size_t agent_pos = 0;
  size_t action_pos = 0;
  size_t object_pos = 0;
  long modifier_pos = -1;   // -1 when absent
  long connective_pos = -1; // position of the connective after this clause
};

std::vector<ClauseLayout> layout_caption(std::span<const TokenId> caption, const Lexicon& lex) {
  // Assumes the caption parses; positions follow the clause template
  // "the AGENT ACTION the OBJECT [MODIFIER]".
  parse_caption(caption, lex);
  std::vector<ClauseLayout> clauses;
  size_t pos = 0;
  while (pos < caption.size()) {
    ClauseLayout c;
    c.agent_pos = pos + 1;
    c.action_pos = pos + 2;
    c.object_pos = pos + 4;
    pos += 5;
    if (pos < caption.size() && lex.is_modifier(caption[pos])) {
      c.modifier_pos = static_cast<long>(pos);
      ++pos;
    }
    if (pos < caption.size()) {
      c.connective_pos = static_cast<long>(pos);
      ++pos;
    }
    clauses.push_back(c);
  }
  return clauses;
}

template <typename Getter>
std::vector<TokenId> video_words(const VideoTrack& video, Getter get) {
  std::vector<TokenId> words;
  for (const Event& e : video.events) {
    if (auto w = get(e)) words.push_back(*w);
  }
  return words;
}

TokenId pick_replacement(TokenId class_begin, int class_count,
                         std::span<const TokenId> excluded, Rng& rng) {
  std::vector<TokenId> candidates;
  for (int i = 0; i < class_count; ++i) {
    const TokenId w = class_begin + i;
    if (std::find(excluded.begin(), excluded.end(), w) == excluded.end()) {
      candidates.push_back(w);
    }
  }
  if (candidates.empty()) {
    throw CorruptionInapplicable("no replacement candidate outside the video's words");
  }
  return candidates[rng.below(candidates.size())];
}

CorruptionRecord make_swap_record(CorruptionKind kind, std::span<const TokenId> truth,
                                  size_t pos, TokenId replacement) {
  CorruptionRecord rec;
  rec.kind = kind;
  rec.span_start = pos;
  rec.span_len = 1;
  rec.original_tokens = {truth[pos]};
  rec.replacement_tokens = {replacement};
  return rec;
}

}  // namespace

std::string_view corruption_kind_name(CorruptionKind kind) {
  const auto i = static_cast<int>(kind);
  if (i < 0 || i >= kCorruptionKindCount) {
    throw Error(ErrorCode::Internal, "bad corruption kind code");
  }
  return kKindNames[i];
}

CorruptionKind corruption_kind_from_name(std::string_view name) {
  for (int i = 0; i < kCorruptionKindCount; ++i) {
    if (name == kKindNames[i]) return static_cast<CorruptionKind>(i);
  }
  throw Error(ErrorCode::Usage, "unknown corruption kind: " + std::string(name));
}

std::array<CorruptionKind, kCorruptionKindCount> all_corruption_kinds() {
  std::array<CorruptionKind, kCorruptionKindCount> kinds;
  for (int i = 0; i < kCorruptionKindCount; ++i) kinds[i] = static_cast<CorruptionKind>(i);
  return kinds;
}

bool corruption_applicable(CorruptionKind kind, const VideoTrack& video) {
  switch (kind) {
    case CorruptionKind::ObjectSwap:
    case CorruptionKind::ActionSwap:
    case CorruptionKind::AgentSwap:
    case CorruptionKind::ModifierSwap:  // inserts a modifier when none present
    case CorruptionKind::HallucinationInsert:
      return !video.events.empty();
    case CorruptionKind::CountRelationSwap:
    case CorruptionKind::EventOrderFlip:
      return video.events.size() >= 2;
  }
  return false;
}

CorruptionResult corrupt(std::span<const TokenId> truth, CorruptionKind kind,
                         const VideoTrack& video, const Lexicon& lex, Rng& rng) {
  if (!corruption_applicable(kind, video)) {
    throw CorruptionInapplicable(std::string(corruption_kind_name(kind)) +
                                 " not applicable to video with " +
                                 std::to_string(video.events.size()) + " event(s)");
  }
  const auto clauses = layout_caption(truth, lex);
  const size_t n = clauses.size();

  CorruptionRecord rec;
  switch (kind) {
    case CorruptionKind::ObjectSwap: {
      const size_t c = rng.below(n);
      const auto excluded = video_words(video, [](const Event& e) { return std::optional<TokenId>(e.object); });
      const TokenId repl = pick_replacement(lex.objects_begin(), lex.object_count(), excluded, rng);
      rec = make_swap_record(kind, truth, clauses[c].object_pos, repl);
      break;
    }
    case CorruptionKind::ActionSwap: {
      const size_t c = rng.below(n);
      const auto excluded = video_words(video, [](const Event& e) { return std::optional<TokenId>(e.action); });
      const TokenId repl = pick_replacement(lex.actions_begin(), lex.action_count(), excluded, rng);
      rec = make_swap_record(kind, truth, clauses[c].action_pos, repl);
      break;
    }
    case CorruptionKind::AgentSwap: {
      const size_t c = rng.below(n);
      const auto excluded = video_words(video, [](const Event& e) { return std::optional<TokenId>(e.agent); });
      const TokenId repl = pick_replacement(lex.agents_begin(), lex.agent_count(), excluded, rng);
      rec = make_swap_record(kind, truth, clauses[c].agent_pos, repl);
      break;
    }
    case CorruptionKind::ModifierSwap: {
      const auto excluded = video_words(video, [](const Event& e) { return e.modifier; });
      std::vector<size_t> with_mod;
      for (size_t i = 0; i < n; ++i) {
        if (clauses[i].modifier_pos >= 0) with_mod.push_back(i);
      }
      const TokenId repl = pick_replacement(lex.modifiers_begin(), lex.modifier_count(), excluded, rng);
      if (!with_mod.empty()) {
        const size_t c = with_mod[rng.below(with_mod.size())];
        rec = make_swap_record(kind, truth, static_cast<size_t>(clauses[c].modifier_pos), repl);
      } else {
        const size_t c = rng.below(n);
        rec.kind = kind;
        rec.span_start = clauses[c].object_pos + 1;
        rec.span_len = 0;
        rec.replacement_tokens = {repl};
      }
      break;
    }
    case CorruptionKind::CountRelationSwap: {
      // The grammar has no numerals; swapping the sequential connective for a
      // simultaneity one is this corpus's count/relation contrast.
      std::vector<size_t> connectives;
      for (const auto& c : clauses) {
        if (c.connective_pos >= 0) connectives.push_back(static_cast<size_t>(c.connective_pos));
      }
      const size_t pos = connectives[rng.below(connectives.size())];
      rec = make_swap_record(kind, truth, pos, lex.id("meanwhile"));
      break;
    }
    case CorruptionKind::HallucinationInsert: {
      std::vector<std::pair<TokenId, TokenId>> free_pairs;
      for (int a = 0; a < lex.agent_count(); ++a) {
        for (int v = 0; v < lex.action_count(); ++v) {
          const TokenId agent = lex.agents_begin() + a;
          const TokenId action = lex.actions_begin() + v;
          const bool in_video = std::any_of(video.events.begin(), video.events.end(), [&](const Event& e) {
            return e.agent == agent && e.action == action;
          });
          if (!in_video) free_pairs.emplace_back(agent, action);
        }
      }
      if (free_pairs.empty()) {
        throw CorruptionInapplicable("no unused (agent, action) pair for hallucination");
      }
      const auto [agent, action] = free_pairs[rng.below(free_pairs.size())];
      const TokenId object = lex.objects_begin() + static_cast<TokenId>(rng.below(lex.object_count()));
      rec.kind = kind;
      rec.span_start = truth.size();
      rec.span_len = 0;
      rec.replacement_tokens = {lex.id("then"), lex.id("the"), agent, action, lex.id("the"), object};
      break;
    }
    case CorruptionKind::EventOrderFlip: {
      std::vector<Event> reversed(video.events.rbegin(), video.events.rend());
      rec.kind = kind;
      rec.span_start = 0;
      rec.span_len = truth.size();
      rec.original_tokens.assign(truth.begin(), truth.end());
      rec.replacement_tokens = render_caption(reversed, lex);
      break;
    }
  }

  CorruptionResult result;
  result.corrupted = apply_record(truth, rec);
  result.record = std::move(rec);
  if (std::equal(result.corrupted.begin(), result.corrupted.end(), truth.begin(), truth.end())) {
    throw Error(ErrorCode::Internal, "corruption produced an identical caption");
  }
  parse_caption(result.corrupted, lex);  // structural validity is part of the contract
  return result;
}

std::vector<TokenId> apply_record(std::span<const TokenId> truth, const CorruptionRecord& record) {
  if (record.span_start + record.span_len > truth.size()) {
    throw Error(ErrorCode::Data, "corruption record span out of range");
  }
  if (record.span_len != record.original_tokens.size() ||
      !std::equal(record.original_tokens.begin(), record.original_tokens.end(),
                  truth.begin() + static_cast<long>(record.span_start))) {
    throw Error(ErrorCode::Data, "corruption record does not match the caption");
  }
  std::vector<TokenId> out(truth.begin(), truth.begin() + static_cast<long>(record.span_start));
  out.insert(out.end(), record.replacement_tokens.begin(), record.replacement_tokens.end());
  out.insert(out.end(), truth.begin() + static_cast<long>(record.span_start + record.span_len), truth.end());
  return out;
}

std::vector<TokenId> invert_record(std::span<const TokenId> corrupted, const CorruptionRecord& record) {
  const size_t repl_len = record.replacement_tokens.size();
  if (record.span_start + repl_len > corrupted.size()) {
    throw Error(ErrorCode::Data, "corruption record span out of range");
  }
  if (!std::equal(record.replacement_tokens.begin(), record.replacement_tokens.end(),
                  corrupted.begin() + static_cast<long>(record.span_start))) {
    throw Error(ErrorCode::Data, "corruption record does not match the corrupted caption");
  }
  std::vector<TokenId> out(corrupted.begin(), corrupted.begin() + static_cast<long>(record.span_start));
  out.insert(out.end(), record.original_tokens.begin(), record.original_tokens.end());
  out.insert(out.end(), corrupted.begin() + static_cast<long>(record.span_start + repl_len), corrupted.end());
  return out;
}

CorruptionKind sample_applicable_kind(const VideoTrack& video,
                                      std::span<const double> weights, Rng& rng) {
  if (weights.size() != kCorruptionKindCount) {
    throw Error(ErrorCode::Usage, "expected 7 corruption weights");
  }
  double total = 0.0;
  for (int i = 0; i < kCorruptionKindCount; ++i) {
    if (weights[i] < 0.0) throw Error(ErrorCode::Usage, "corruption weights must be >= 0");
    if (corruption_applicable(static_cast<CorruptionKind>(i), video)) total += weights[i];
  }
  if (total <= 0.0) {
    throw Error(ErrorCode::Data, "all corruption weights are zero among applicable kinds");
  }
  const double r = rng.real01() * total;
  double acc = 0.0;
  int last = -1;
  for (int i = 0; i < kCorruptionKindCount; ++i) {
    if (!corruption_applicable(static_cast<CorruptionKind>(i), video) || weights[i] <= 0.0) continue;
    acc += weights[i];
    last = i;
    if (r < acc) return static_cast<CorruptionKind>(i);
  }
  return static_cast<CorruptionKind>(last);
}

std::vector<BindingTest> build_binding_testset(const Corpus& corpus, Split split,
                                               std::span<const CorruptionKind> categories,
                                               int tests_per_category, Rng& rng) {
  if (tests_per_category < 1) throw Error(ErrorCode::Usage, "tests_per_category must be >= 1");
  const auto indices = corpus.split_indices(split);
  std::vector<BindingTest> tests;
  for (CorruptionKind category : categories) {
    std::vector<size_t> applicable;
    for (size_t idx : indices) {
      if (corruption_applicable(category, corpus.records[idx].video)) applicable.push_back(idx);
    }
    if (applicable.empty()) {
      throw Error(ErrorCode::Data, "no applicable videos in split for category " +
                                       std::string(corruption_kind_name(category)));
    }
    for (int t = 0; t < tests_per_category; ++t) {
      const auto& rec = corpus.records[applicable[rng.below(applicable.size())]];
      BindingTest test;
      test.video_id = rec.video.video_id;
      test.positive = rec.truth;
      test.negative = corrupt(rec.truth, category, rec.video, corpus.lexicon, rng).corrupted;
      test.category = category;
      tests.push_back(std::move(test));
    }
  }
  return tests;
}

void write_binding_tests_jsonl(std::span<const BindingTest> tests, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Data, "cannot open for writing: " + path);
  for (const auto& t : tests) {
    json j{{"video_id", t.video_id},
           {"positive", t.positive},
           {"negative", t.negative},
           {"category", std::string(corruption_kind_name(t.category))}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::Data, "write failed: " + path);
}

std::vector<BindingTest> load_binding_tests_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Data, "cannot open binding test file: " + path);
  std::vector<BindingTest> tests;
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
    BindingTest t;
    t.video_id = j.at("video_id").get<std::string>();
    t.positive = j.at("positive").get<std::vector<TokenId>>();
    t.negative = j.at("negative").get<std::vector<TokenId>>();
    t.category = corruption_kind_from_name(j.at("category").get<std::string>());
    tests.push_back(std::move(t));
  }
  return tests;
}

}  // namespace haca
