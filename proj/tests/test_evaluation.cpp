#include <cmath>
#include <map>
#include <memory>
#include <set>

#include "doctest.h"
#include "error.hpp"
#include "evaluation.hpp"
#include "prompting.hpp"

using namespace haca;

namespace {

Corpus eval_corpus(uint64_t seed = 81, int videos = 200) {
  GenConfig cfg;
  cfg.agents = cfg.actions = cfg.objects = cfg.modifiers = 8;
  cfg.videos = videos;
  Rng rng(seed);
  return generate_corpus(cfg, rng);
}

// Direct enumeration of the AP definition, kept independent of the
// implementation: precision@k is recomputed from scratch at every hit.
double brute_force_ap(std::span<const std::string> ranking,
                      const std::unordered_set<std::string>& relevant) {
  double total = 0.0;
  for (size_t k = 0; k < ranking.size(); ++k) {
    if (!relevant.count(ranking[k])) continue;
    int hits = 0;
    for (size_t j = 0; j <= k; ++j) hits += relevant.count(ranking[j]) ? 1 : 0;
    total += double(hits) / double(k + 1);
  }
  return total / double(relevant.size());
}

std::vector<std::string> ids(std::initializer_list<const char*> list) {
  return {list.begin(), list.end()};
}

}  // namespace

TEST_CASE("single relevant item at rank 1 gives AP 1") {
  CHECK(average_precision(ids({"a", "b", "c"}), {"a"}) == 1.0);
}

TEST_CASE("two relevant at ranks 2 and 4 of 5 give AP 0.5") {
  CHECK(average_precision(ids({"x", "a", "y", "b", "z"}), {"a", "b"}) == 0.5);
}

TEST_CASE("all candidates relevant gives AP 1") {
  CHECK(average_precision(ids({"a", "b", "c"}), {"a", "b", "c"}) == 1.0);
}

TEST_CASE("missing relevant ids are rejected") {
  CHECK_THROWS_AS(average_precision(ids({"a", "b"}), {"zzz"}), Error);
  CHECK_THROWS_AS(average_precision(ids({"a", "b"}), {}), Error);
}

TEST_CASE("average_precision equals brute-force enumeration on 1000 random instances") {
  Rng rng(82);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + int(rng.below(9));  // up to 10 candidates
    std::vector<std::string> ranking;
    for (int i = 0; i < n; ++i) ranking.push_back("c" + std::to_string(i));
    rng.shuffle(ranking);
    std::unordered_set<std::string> relevant;
    const int r = 1 + int(rng.below(uint64_t(n)));
    while (int(relevant.size()) < r) {
      relevant.insert("c" + std::to_string(rng.below(uint64_t(n))));
    }
    CHECK(average_precision(ranking, relevant) == brute_force_ap(ranking, relevant));
  }
}

TEST_CASE("constant scorer fails every binding test under the strict tie rule") {
  const auto corpus = eval_corpus();
  const VideoLookup videos(corpus);
  Rng rng(83);
  const auto kinds = all_corruption_kinds();
  const auto tests = build_binding_testset(corpus, Split::Test, kinds, 20, rng);
  const auto report = binding_accuracy_with(
      tests, videos, [](std::span<const TokenId>, std::span<const TokenId>) { return 0.5; });
  CHECK(report.macro_avg == 0.0);
  CHECK(report.micro_avg == 0.0);
}

TEST_CASE("random scorer sits near 50 percent; oracle reaches 100; antisymmetry holds") {
  const auto corpus = eval_corpus(84, 300);
  const VideoLookup videos(corpus);
  Rng test_rng(85);
  const auto kinds = all_corruption_kinds();
  const auto tests = build_binding_testset(corpus, Split::Test, kinds, 750, test_rng);
  REQUIRE(tests.size() >= 5000);

  auto shared_rng = std::make_shared<Rng>(86);
  const PairScorer random_scorer = [shared_rng](std::span<const TokenId>,
                                                std::span<const TokenId>) {
    return shared_rng->real01();
  };
  const auto random_report = binding_accuracy_with(tests, videos, random_scorer);
  CHECK(random_report.micro_avg > 0.48);
  CHECK(random_report.micro_avg < 0.52);

  const PairScorer oracle = [&corpus, &videos](std::span<const TokenId> features,
                                               std::span<const TokenId> caption) {
    for (const auto& rec : corpus.records) {
      if (rec.video.feature_tokens == std::vector<TokenId>(features.begin(), features.end())) {
        return caption_matches_video(caption, rec.video, corpus.lexicon) ? 1.0 : 0.0;
      }
    }
    return 0.0;
  };
  const auto oracle_report = binding_accuracy_with(tests, videos, oracle);
  CHECK(oracle_report.micro_avg == 1.0);
  CHECK(oracle_report.macro_avg == 1.0);

  // Antisymmetry on tie-free scores: flipping the scorer complements accuracy.
  const PairScorer scorer_a = [](std::span<const TokenId> f, std::span<const TokenId> c) {
    return Rng(fnv1a64(f.data(), f.size_bytes(), fnv1a64(c.data(), c.size_bytes()))).real01();
  };
  const PairScorer scorer_flipped = [&scorer_a](std::span<const TokenId> f,
                                                std::span<const TokenId> c) {
    return 1.0 - scorer_a(f, c);
  };
  const auto report_a = binding_accuracy_with(tests, videos, scorer_a);
  const auto report_b = binding_accuracy_with(tests, videos, scorer_flipped);
  CHECK(report_a.micro_avg + report_b.micro_avg == doctest::Approx(1.0).epsilon(1e-9));
}

namespace {

RetrievalTask shaped_task(int queries, int relevant_per_query, int candidates) {
  RetrievalTask task;
  task.name = "shaped";
  for (int c = 0; c < candidates; ++c) {
    task.candidates.push_back({"c" + std::to_string(c), {TokenId(c % 5)}});
  }
  for (int q = 0; q < queries; ++q) {
    RetrievalQuery query;
    query.caption = {TokenId(q)};
    for (int r = 0; r < relevant_per_query; ++r) {
      query.relevant_video_ids.push_back("c" + std::to_string(q * relevant_per_query + r));
    }
    task.queries.push_back(std::move(query));
  }
  return task;
}

}  // namespace

TEST_CASE("uniform random scorer on the 18x216 task lands near the analytic expectation") {
  const auto task = shaped_task(18, 12, 216);
  auto rng = std::make_shared<Rng>(88);
  double sum = 0.0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    const auto report = retrieval_map_with(
        task, [rng](std::span<const TokenId>, std::span<const TokenId>) { return rng->real01(); });
    sum += report.map;
  }
  const double map100 = 100.0 * sum / reps;
  CHECK(map100 > 7.3 - 1.5);
  CHECK(map100 < 7.3 + 1.5);
}

TEST_CASE("oracle scorer gives mAP 1") {
  // Give every candidate unique features, then score by true relevance.
  auto task = shaped_task(6, 3, 30);
  std::map<std::vector<TokenId>, std::string> id_by_features;
  for (size_t i = 0; i < task.candidates.size(); ++i) {
    task.candidates[i].feature_tokens = {TokenId(i)};
    id_by_features[task.candidates[i].feature_tokens] = task.candidates[i].video_id;
  }
  std::map<int, std::unordered_set<std::string>> relevant_by_query;
  for (size_t q = 0; q < task.queries.size(); ++q) {
    task.queries[q].caption = {TokenId(q)};
    relevant_by_query[int(q)] = {task.queries[q].relevant_video_ids.begin(),
                                 task.queries[q].relevant_video_ids.end()};
  }
  const auto report = retrieval_map_with(
      task, [&](std::span<const TokenId> features, std::span<const TokenId> caption) {
        const auto& id = id_by_features.at({features.begin(), features.end()});
        return relevant_by_query.at(int(caption[0])).count(id) ? 1.0 : 0.0;
      });
  CHECK(report.map == 1.0);
}

TEST_CASE("mAP is invariant under candidate relabeling for tie-free scores") {
  auto task = shaped_task(4, 2, 16);
  const PairScorer scorer = [](std::span<const TokenId> f, std::span<const TokenId> c) {
    return Rng(fnv1a64(f.data(), f.size_bytes(), fnv1a64(c.data(), c.size_bytes()))).real01();
  };
  // Give every candidate unique features so scores are tie-free per query.
  for (size_t i = 0; i < task.candidates.size(); ++i) {
    task.candidates[i].feature_tokens = {TokenId(i), TokenId(i * 7 + 1)};
  }
  const auto before = retrieval_map_with(task, scorer);
  RetrievalTask relabeled = task;
  for (auto& cand : relabeled.candidates) cand.video_id = "x" + cand.video_id;
  for (auto& query : relabeled.queries) {
    for (auto& id : query.relevant_video_ids) id = "x" + id;
  }
  const auto after = retrieval_map_with(relabeled, scorer);
  CHECK(before.map == doctest::Approx(after.map).epsilon(1e-12));
}

TEST_CASE("retrieval task validation catches malformed tasks") {
  auto task = shaped_task(2, 2, 8);
  task.queries[0].relevant_video_ids.push_back("missing");
  CHECK_THROWS_AS(task.validate(), Error);
  auto empty_rel = shaped_task(2, 2, 8);
  empty_rel.queries[1].relevant_video_ids.clear();
  CHECK_THROWS_AS(empty_rel.validate(), Error);
}

TEST_CASE("retrieval task serialization round-trips") {
  const auto task = shaped_task(3, 2, 12);
  const std::string path = "/tmp/haca_test_retrieval.json";
  write_retrieval_task_json(task, path);
  const auto loaded = load_retrieval_task_json(path);
  CHECK(loaded.name == task.name);
  REQUIRE(loaded.queries.size() == task.queries.size());
  REQUIRE(loaded.candidates.size() == task.candidates.size());
  for (size_t i = 0; i < task.queries.size(); ++i) {
    CHECK(loaded.queries[i].caption == task.queries[i].caption);
    CHECK(loaded.queries[i].relevant_video_ids == task.queries[i].relevant_video_ids);
  }
}

TEST_CASE("correction scoring: perfect output, yes-failure and partial overlap") {
  const auto lex = Lexicon::build(8, 8, 8, 8);
  Rng rng(91);
  const auto video = sample_video(lex, 1, rng);
  const auto truth = render_caption(video, lex);

  // generation exactly A(No, truth): all three metrics hit
  auto perfect = format_haca_answer(false, truth, lex);
  perfect.pop_back();  // generate() never returns the EOS itself
  const auto s1 = score_correction(perfect, truth, video.events, lex);
  CHECK(s1.exact_match);
  CHECK(s1.token_f1 == 1.0);
  CHECK(s1.parse_fix);

  // generation = Yes-template: the failure mode scores zero everywhere
  auto yes_answer = format_haca_answer(true, std::nullopt, lex);
  yes_answer.pop_back();
  const auto s2 = score_correction(yes_answer, truth, video.events, lex);
  CHECK(!s2.exact_match);
  CHECK(s2.token_f1 == 0.0);
  CHECK(!s2.parse_fix);

  // ["a","b"] vs ["a","c"] -> F1 = 0.5
  const std::vector<TokenId> pred{lex.id("a0"), lex.id("v0")};
  const std::vector<TokenId> ref{lex.id("a0"), lex.id("v1")};
  const auto s3 = score_correction(pred, ref, video.events, lex);
  CHECK(s3.token_f1 == 0.5);
  CHECK(!s3.exact_match);
}

TEST_CASE("bare caption generations score without the prefix") {
  const auto lex = Lexicon::build(8, 8, 8, 8);
  Rng rng(92);
  const auto video = sample_video(lex, 2, rng);
  const auto truth = render_caption(video, lex);
  const auto s = score_correction(truth, truth, video.events, lex);
  CHECK(s.exact_match);
  CHECK(s.parse_fix);
}

TEST_CASE("eval report serializes to json and text") {
  EvalReport report;
  report.checkpoint_id = "abc";
  report.objective = "haca";
  report.seed = 3;
  report.dataset_hash = "d00d";
  report.config_hash = "c0de";
  report.binding.per_category["action_swap"] = {10, 7, 0.7};
  report.binding.macro_avg = 0.7;
  report.binding.micro_avg = 0.7;
  report.binding.total_trials = 10;
  report.retrieval["temporal"].map = 0.25;
  report.retrieval["temporal"].per_query_ap = {0.2, 0.3};
  report.correction = {0.5, 0.6, 0.55, 20};
  const auto j = eval_report_to_json(report);
  CHECK(j.find("\"macro_avg\": 0.7") != std::string::npos);
  const auto t = eval_report_to_text(report);
  CHECK(t.find("action_swap") != std::string::npos);
  CHECK(t.find("70.0") != std::string::npos);
}
