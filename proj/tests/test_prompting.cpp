#include <cstdlib>
#include <fstream>
#include <map>

#include "doctest.h"
#include "error.hpp"
#include "prompting.hpp"

using namespace haca;

namespace {

const Lexicon& lex() {
  static Lexicon instance = Lexicon::build(8, 8, 8, 8);
  return instance;
}

Corpus tiny_corpus(uint64_t seed = 21, int videos = 100) {
  GenConfig cfg;
  cfg.agents = cfg.actions = cfg.objects = cfg.modifiers = 8;
  cfg.videos = videos;
  Rng rng(seed);
  return generate_corpus(cfg, rng);
}

std::vector<TokenId> caption_a0() {
  return {lex().id("the"), lex().id("a0"), lex().id("v0"), lex().id("the"), lex().id("o0")};
}

}  // namespace

TEST_CASE("entailment question is the template followed by the caption") {
  const auto w = caption_a0();
  const auto q = format_entailment_question(w, lex());
  CHECK(lex().render(q) == "Does this caption accurately describe the video? Caption: the a0 v0 the o0");
  const auto expected_prefix =
      lex().tokenize("Does this caption accurately describe the video ? Caption :");
  REQUIRE(q.size() == expected_prefix.size() + w.size());
  for (size_t i = 0; i < expected_prefix.size(); ++i) CHECK(q[i] == expected_prefix[i]);
}

TEST_CASE("question round-trips back to the caption") {
  const auto w = caption_a0();
  CHECK(extract_question_caption(format_entailment_question(w, lex()), lex()) == w);
  CHECK(extract_question_caption(format_mask_question(w, lex()), lex()) == w);
}

TEST_CASE("different captions give different questions") {
  auto w1 = caption_a0();
  auto w2 = w1;
  w2[1] = lex().id("a1");
  CHECK(format_entailment_question(w1, lex()) != format_entailment_question(w2, lex()));
}

TEST_CASE("empty captions are rejected") {
  CHECK_THROWS_AS(format_entailment_question(std::vector<TokenId>{}, lex()), Error);
  CHECK_THROWS_AS(format_mask_question(std::vector<TokenId>{}, lex()), Error);
}

TEST_CASE("haca yes answer is the fixed sentence") {
  const auto a = format_haca_answer(true, std::nullopt, lex());
  REQUIRE(!a.empty());
  CHECK(a.front() == special::kYes);
  CHECK(a.back() == special::kEos);
  const std::vector<TokenId> body(a.begin(), a.end() - 1);
  CHECK(lex().render(body) == "Yes, the caption accurately describes the video");
}

TEST_CASE("haca no answer carries the correction after the fixed prefix") {
  const auto w = caption_a0();
  const auto a = format_haca_answer(false, w, lex());
  CHECK(a.front() == special::kNo);
  CHECK(a.back() == special::kEos);
  const std::vector<TokenId> body(a.begin(), a.end() - 1);
  CHECK(lex().render(body) == "No. This caption shall be corrected as: the a0 v0 the o0");
  const auto prefix = haca_no_prefix(lex());
  REQUIRE(body.size() == prefix.size() + w.size());
  CHECK(std::equal(w.begin(), w.end(), body.begin() + long(prefix.size())));
}

TEST_CASE("haca answer preconditions") {
  CHECK_THROWS_AS(format_haca_answer(true, caption_a0(), lex()), Error);
  CHECK_THROWS_AS(format_haca_answer(false, std::nullopt, lex()), Error);
}

TEST_CASE("mask question contains MASK tokens after masking") {
  Rng rng(3);
  const auto w = caption_a0();
  const auto masked = mask_caption(w, 0.45, lex(), rng);
  const auto q = format_mask_question(masked.masked, lex());
  int masks = 0;
  for (TokenId t : q) masks += (t == special::kMask);
  CHECK(masks == int(masked.masked_positions.size()));
  CHECK(masks >= 1);
}

TEST_CASE("template words are function words, never maskable or swappable") {
  for (const char* templ :
       {"Does this caption accurately describe the video ? Caption :",
        ", the caption accurately describes the video", ". This caption shall be corrected as :",
        "Please correct this caption to accurately describe the video . Caption :"}) {
    for (TokenId t : lex().tokenize(templ)) {
      CHECK(lex().is_function(t));
    }
  }
}

TEST_CASE("entailment training set counts positives and negatives 1:1") {
  const auto corpus = tiny_corpus(22, 125);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Entailment;
  Rng rng(1);
  const auto examples = build_training_set(corpus, Split::Train, objective, rng);
  const size_t n_train = corpus.split_indices(Split::Train).size();
  CHECK(examples.size() == 2 * n_train);
  size_t yes = 0, no = 0;
  for (const auto& ex : examples) {
    CHECK(ex.task == TaskKind::Entailment);
    REQUIRE(ex.label.has_value());
    REQUIRE(ex.answer.size() == 2);
    CHECK(ex.answer.back() == special::kEos);
    if (ex.answer.front() == special::kYes) {
      CHECK(*ex.label == ExampleLabel::Positive);
      ++yes;
    } else {
      CHECK(ex.answer.front() == special::kNo);
      CHECK(*ex.label == ExampleLabel::Negative);
      ++no;
    }
  }
  CHECK(yes == n_train);
  CHECK(no == n_train);
}

TEST_CASE("haca negatives end with the truth caption") {
  const auto corpus = tiny_corpus(23, 60);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Haca;
  Rng rng(2);
  const auto examples = build_training_set(corpus, Split::Train, objective, rng);
  const auto prefix = haca_no_prefix(corpus.lexicon);
  for (const auto& ex : examples) {
    CHECK(ex.task == TaskKind::Haca);
    REQUIRE(ex.label.has_value());
    if (*ex.label == ExampleLabel::Negative) {
      const auto* rec = corpus.find(ex.video_id);
      REQUIRE(rec != nullptr);
      // answer = NO-prefix + truth + EOS
      REQUIRE(ex.answer.size() == prefix.size() + rec->truth.size() + 1);
      CHECK(std::equal(rec->truth.begin(), rec->truth.end(),
                       ex.answer.begin() + long(prefix.size())));
      // the corrected caption parses and matches the video (oracle check)
      const std::vector<TokenId> correction(ex.answer.begin() + long(prefix.size()),
                                            ex.answer.end() - 1);
      CHECK(caption_matches_video(correction, rec->video, corpus.lexicon));
      // and the question's caption does not
      const auto corrupted = extract_question_caption(ex.question, corpus.lexicon);
      CHECK(!caption_matches_video(corrupted, rec->video, corpus.lexicon));
    }
  }
}

TEST_CASE("haca+mask mixes tasks at the configured ratio") {
  const auto corpus = tiny_corpus(24, 80);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::HacaPlusMask;
  objective.mix_ratio = 1.0;
  Rng rng(3);
  const auto examples = build_training_set(corpus, Split::Train, objective, rng);
  size_t haca = 0, mask = 0;
  for (const auto& ex : examples) {
    if (ex.task == TaskKind::Haca) ++haca;
    if (ex.task == TaskKind::MaskCorrection) {
      ++mask;
      CHECK(!ex.label.has_value());
      // the mask-correction answer is the truth caption
      const auto* rec = corpus.find(ex.video_id);
      REQUIRE(rec != nullptr);
      std::vector<TokenId> expected = rec->truth;
      expected.push_back(special::kEos);
      CHECK(ex.answer == expected);
    }
  }
  CHECK(haca + mask == examples.size());
  CHECK(std::llabs(long(haca) - long(mask)) <= 1);
}

TEST_CASE("pretrain examples have empty questions and caption answers") {
  const auto corpus = tiny_corpus(25, 40);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Pretrain;
  Rng rng(4);
  const auto examples = build_training_set(corpus, Split::Train, objective, rng);
  for (const auto& ex : examples) {
    CHECK(ex.task == TaskKind::Pretrain);
    CHECK(ex.question.empty());
    CHECK(!ex.label.has_value());
    CHECK(ex.answer.back() == special::kEos);
  }
}

TEST_CASE("empty split is rejected") {
  GenConfig cfg;
  cfg.agents = cfg.actions = cfg.objects = cfg.modifiers = 8;
  cfg.videos = 10;
  cfg.train_fraction = 1.0;
  cfg.val_fraction = 0.0;
  cfg.test_fraction = 0.0;
  Rng gen_rng(26);
  const auto corpus = generate_corpus(cfg, gen_rng);
  ObjectiveConfig objective;
  Rng rng(5);
  CHECK_THROWS_AS(build_training_set(corpus, Split::Test, objective, rng), Error);
}

TEST_CASE("AgentSwap never appears in training negatives by default") {
  const auto corpus = tiny_corpus(27, 80);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Entailment;
  Rng rng(6);
  const auto examples = build_training_set(corpus, Split::Train, objective, rng);
  for (const auto& ex : examples) {
    if (ex.label && *ex.label == ExampleLabel::Negative) {
      const auto* rec = corpus.find(ex.video_id);
      const auto corrupted = extract_question_caption(ex.question, corpus.lexicon);
      const auto parsed = parse_caption(corrupted, corpus.lexicon);
      // same number of events implies no hallucination; check agent fields
      if (parsed.events.size() == rec->video.events.size()) {
        for (size_t i = 0; i < parsed.events.size(); ++i) {
          // order flips permute whole events; agents must still come from the video
          bool agent_in_video = false;
          for (const auto& e : rec->video.events) {
            agent_in_video |= (e.agent == parsed.events[i].agent);
          }
          CHECK(agent_in_video);
        }
      }
    }
  }
}

TEST_CASE("training set serialization round-trips through jsonl") {
  const auto corpus = tiny_corpus(28, 30);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Haca;
  Rng rng(7);
  const auto examples = build_training_set(corpus, Split::Train, objective, rng);
  write_training_set_jsonl(examples, "/tmp/haca_test_training.jsonl");
  write_training_set_text(examples, corpus.lexicon, "/tmp/haca_test_training.txt");
  // spot check: text dump contains the fixed templates
  std::ifstream in("/tmp/haca_test_training.txt");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("Does this caption accurately describe the video?") != std::string::npos);
}
