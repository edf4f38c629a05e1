#include <map>
#include <set>

#include "corruption.hpp"
#include "doctest.h"
#include "error.hpp"

using namespace haca;

namespace {

struct Fixture {
  Lexicon lex = Lexicon::build(8, 8, 8, 8);

  VideoTrack video(int n_events, uint64_t seed) const {
    Rng rng(seed);
    return sample_video(lex, n_events, rng);
  }
};

}  // namespace

TEST_CASE("action swap changes exactly the action field") {
  Fixture f;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const auto video = f.video(1, seed);
    const auto truth = render_caption(video, f.lex);
    Rng rng(seed + 1000);
    const auto result = corrupt(truth, CorruptionKind::ActionSwap, video, f.lex, rng);
    const auto parsed = parse_caption(result.corrupted, f.lex);
    REQUIRE(parsed.events.size() == 1);
    CHECK(parsed.events[0].agent == video.events[0].agent);
    CHECK(parsed.events[0].object == video.events[0].object);
    CHECK(parsed.events[0].modifier == video.events[0].modifier);
    CHECK(parsed.events[0].action != video.events[0].action);
  }
}

TEST_CASE("event order flip requires at least two events") {
  Fixture f;
  const auto video = f.video(1, 3);
  const auto truth = render_caption(video, f.lex);
  Rng rng(1);
  CHECK_THROWS_AS(corrupt(truth, CorruptionKind::EventOrderFlip, video, f.lex, rng),
                  CorruptionInapplicable);
  CHECK(!corruption_applicable(CorruptionKind::EventOrderFlip, video));
  CHECK(!corruption_applicable(CorruptionKind::CountRelationSwap, video));
}

TEST_CASE("event order flip reverses the clauses and nothing else") {
  Fixture f;
  const auto video = f.video(2, 4);
  const auto truth = render_caption(video, f.lex);
  Rng rng(1);
  const auto result = corrupt(truth, CorruptionKind::EventOrderFlip, video, f.lex, rng);
  const auto parsed = parse_caption(result.corrupted, f.lex);
  REQUIRE(parsed.events.size() == 2);
  CHECK(parsed.events[0] == video.events[1]);
  CHECK(parsed.events[1] == video.events[0]);
  std::multiset<TokenId> before(truth.begin(), truth.end());
  std::multiset<TokenId> after(result.corrupted.begin(), result.corrupted.end());
  CHECK(before == after);  // tokens rearranged, none added or removed
}

TEST_CASE("swap replacements avoid every same-class word in the video") {
  Fixture f;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const auto video = f.video(1 + int(seed % 3), seed);
    const auto truth = render_caption(video, f.lex);
    Rng rng(seed * 7 + 1);
    for (const auto kind : {CorruptionKind::ObjectSwap, CorruptionKind::ActionSwap,
                            CorruptionKind::AgentSwap, CorruptionKind::ModifierSwap}) {
      const auto result = corrupt(truth, kind, video, f.lex, rng);
      REQUIRE(result.record.replacement_tokens.size() == 1);
      const TokenId repl = result.record.replacement_tokens[0];
      for (const auto& e : video.events) {
        CHECK(repl != e.agent);
        CHECK(repl != e.action);
        CHECK(repl != e.object);
        if (e.modifier) CHECK(repl != *e.modifier);
      }
    }
  }
}

TEST_CASE("hallucination insert appends one parseable clause absent from the video") {
  Fixture f;
  const auto video = f.video(2, 8);
  const auto truth = render_caption(video, f.lex);
  Rng rng(2);
  const auto result = corrupt(truth, CorruptionKind::HallucinationInsert, video, f.lex, rng);
  const auto parsed = parse_caption(result.corrupted, f.lex);
  REQUIRE(parsed.events.size() == video.events.size() + 1);
  const Event& added = parsed.events.back();
  for (const auto& e : video.events) {
    CHECK((added.agent != e.agent || added.action != e.action));
  }
}

TEST_CASE("count/relation swap replaces a connective") {
  Fixture f;
  const auto video = f.video(2, 9);
  const auto truth = render_caption(video, f.lex);
  Rng rng(3);
  const auto result = corrupt(truth, CorruptionKind::CountRelationSwap, video, f.lex, rng);
  const auto parsed = parse_caption(result.corrupted, f.lex);
  CHECK(parsed.events == video.events);
  REQUIRE(parsed.connectives.size() == 1);
  CHECK(parsed.connectives[0] == f.lex.id("meanwhile"));
}

TEST_CASE("records apply and invert exactly") {
  Fixture f;
  const auto kinds = all_corruption_kinds();
  for (uint64_t seed = 0; seed < 300; ++seed) {
    const auto video = f.video(1 + int(seed % 3), seed);
    const auto truth = render_caption(video, f.lex);
    Rng rng(seed + 31);
    const auto kind = kinds[seed % kinds.size()];
    if (!corruption_applicable(kind, video)) continue;
    const auto result = corrupt(truth, kind, video, f.lex, rng);
    CHECK(apply_record(truth, result.record) == result.corrupted);
    CHECK(invert_record(result.corrupted, result.record) == truth);
    CHECK(result.record.original_tokens != result.record.replacement_tokens);
    CHECK(result.corrupted != truth);
  }
}

TEST_CASE("corrupted captions always re-parse") {
  Fixture f;
  const auto kinds = all_corruption_kinds();
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const auto video = f.video(1 + int(seed % 3), seed + 500);
    const auto truth = render_caption(video, f.lex);
    Rng rng(seed);
    for (const auto kind : kinds) {
      if (!corruption_applicable(kind, video)) continue;
      const auto result = corrupt(truth, kind, video, f.lex, rng);
      CHECK_NOTHROW(parse_caption(result.corrupted, f.lex));
      CHECK(!caption_matches_video(result.corrupted, video, f.lex));
    }
  }
}

TEST_CASE("sample_applicable_kind respects applicability") {
  Fixture f;
  const auto video = f.video(1, 40);
  std::array<double, kCorruptionKindCount> uniform;
  uniform.fill(1.0);
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const auto kind = sample_applicable_kind(video, uniform, rng);
    CHECK(kind != CorruptionKind::EventOrderFlip);
    CHECK(kind != CorruptionKind::CountRelationSwap);
  }
}

TEST_CASE("one-hot weights always pick that kind") {
  Fixture f;
  const auto video = f.video(2, 41);
  std::array<double, kCorruptionKindCount> weights{};
  weights[size_t(CorruptionKind::ActionSwap)] = 1.0;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    CHECK(sample_applicable_kind(video, weights, rng) == CorruptionKind::ActionSwap);
  }
}

TEST_CASE("all-zero weights among applicable kinds fail") {
  Fixture f;
  const auto video = f.video(1, 42);
  std::array<double, kCorruptionKindCount> weights{};
  weights[size_t(CorruptionKind::EventOrderFlip)] = 1.0;  // inapplicable for 1 event
  Rng rng(6);
  CHECK_THROWS_AS(sample_applicable_kind(video, weights, rng), Error);
}

TEST_CASE("uniform sampling frequencies stay within 3 sigma") {
  Fixture f;
  const auto video = f.video(2, 43);  // all seven kinds applicable
  std::array<double, kCorruptionKindCount> uniform;
  uniform.fill(1.0);
  Rng rng(7);
  const int n = 10000;
  std::map<CorruptionKind, int> counts;
  for (int i = 0; i < n; ++i) counts[sample_applicable_kind(video, uniform, rng)]++;
  const double p = 1.0 / kCorruptionKindCount;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (const auto kind : all_corruption_kinds()) {
    CHECK(std::abs(counts[kind] - n * p) <= 3 * sigma);
  }
}

TEST_CASE("binding test set pairs truth with a category corruption") {
  GenConfig cfg;
  cfg.agents = cfg.actions = cfg.objects = cfg.modifiers = 8;
  cfg.videos = 200;
  Rng gen_rng(13);
  const auto corpus = generate_corpus(cfg, gen_rng);

  Rng rng(14);
  const auto kinds = all_corruption_kinds();
  const auto tests = build_binding_testset(corpus, Split::Test, kinds, 30, rng);
  CHECK(tests.size() == size_t(30 * kCorruptionKindCount));

  std::map<CorruptionKind, int> per_category;
  for (const auto& t : tests) {
    per_category[t.category]++;
    const auto* rec = corpus.find(t.video_id);
    REQUIRE(rec != nullptr);
    CHECK(rec->split == Split::Test);
    CHECK(t.positive == rec->truth);
    // the oracle says every negative contradicts the video
    CHECK(caption_matches_video(t.positive, rec->video, corpus.lexicon));
    CHECK(!caption_matches_video(t.negative, rec->video, corpus.lexicon));
    if (t.category == CorruptionKind::EventOrderFlip) {
      CHECK(rec->video.events.size() >= 2);
    }
  }
  for (const auto kind : kinds) CHECK(per_category[kind] == 30);
}

TEST_CASE("binding test sets serialize and reload") {
  GenConfig cfg;
  cfg.agents = cfg.actions = cfg.objects = cfg.modifiers = 8;
  cfg.videos = 120;
  Rng gen_rng(15);
  const auto corpus = generate_corpus(cfg, gen_rng);
  Rng rng(16);
  const std::array<CorruptionKind, 2> kinds{CorruptionKind::ActionSwap,
                                            CorruptionKind::ObjectSwap};
  const auto tests = build_binding_testset(corpus, Split::Test, kinds, 10, rng);
  const std::string path = "/tmp/haca_test_binding.jsonl";
  write_binding_tests_jsonl(tests, path);
  const auto loaded = load_binding_tests_jsonl(path);
  REQUIRE(loaded.size() == tests.size());
  for (size_t i = 0; i < tests.size(); ++i) {
    CHECK(loaded[i].video_id == tests[i].video_id);
    CHECK(loaded[i].positive == tests[i].positive);
    CHECK(loaded[i].negative == tests[i].negative);
    CHECK(loaded[i].category == tests[i].category);
  }
}
