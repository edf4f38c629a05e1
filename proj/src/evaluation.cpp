#include "evaluation.hpp"

#include <algorithm>
#include <fstream>

#include "error.hpp"
#include "json.hpp"
#include "prompting.hpp"

namespace haca {

using nlohmann::json;

VideoLookup::VideoLookup(const Corpus& corpus) {
  for (const auto& rec : corpus.records) by_id_[rec.video.video_id] = &rec;
}

const VideoRecord& VideoLookup::at(const std::string& video_id) const {
  auto it = by_id_.find(video_id);
  if (it == by_id_.end()) {
    throw Error(ErrorCode::Data, "unknown video id: " + video_id);
  }
  return *it->second;
}

PairScorer model_scorer(const ModelParams& params, const Lexicon& lex) {
  return [&params, &lex](std::span<const TokenId> features, std::span<const TokenId> caption) {
    const auto question = format_entailment_question(caption, lex);
    return yes_probability(params, features, question);
  };
}

BindingReport binding_accuracy_with(std::span<const BindingTest> tests, const VideoLookup& videos,
                                    const PairScorer& scorer) {
  if (tests.empty()) throw Error(ErrorCode::Data, "empty binding test set");

  std::map<std::string, BindingCategoryResult> per_category;
  for (const auto& test : tests) {
    const auto& rec = videos.at(test.video_id);
    const double pos = scorer(rec.video.feature_tokens, test.positive);
    const double neg = scorer(rec.video.feature_tokens, test.negative);
    auto& cat = per_category[std::string(corruption_kind_name(test.category))];
    cat.trials += 1;
    if (pos > neg) cat.successes += 1;  // strict: ties fail
  }

  BindingReport report;
  double macro_sum = 0.0;
  int successes = 0;
  for (auto& [name, cat] : per_category) {
    if (cat.trials == 0) {
      report.warnings.push_back("category " + name + " has no trials; omitted");
      continue;
    }
    cat.accuracy = static_cast<double>(cat.successes) / cat.trials;
    macro_sum += cat.accuracy;
    successes += cat.successes;
    report.total_trials += cat.trials;
    report.per_category.emplace(name, cat);
  }
  report.macro_avg = macro_sum / static_cast<double>(report.per_category.size());
  report.micro_avg = static_cast<double>(successes) / report.total_trials;
  return report;
}

BindingReport binding_accuracy(const ModelParams& params, const Lexicon& lex,
                               std::span<const BindingTest> tests, const VideoLookup& videos) {
  return binding_accuracy_with(tests, videos, model_scorer(params, lex));
}

double average_precision(std::span<const std::string> ranking,
                         const std::unordered_set<std::string>& relevant) {
  if (relevant.empty()) throw Error(ErrorCode::Data, "empty relevant set");
  size_t found = 0;
  double ap = 0.0;
  for (size_t k = 0; k < ranking.size(); ++k) {
    if (relevant.count(ranking[k])) {
      ++found;
      ap += static_cast<double>(found) / static_cast<double>(k + 1);
    }
  }
  if (found != relevant.size()) {
    throw Error(ErrorCode::Data, "relevant ids missing from the ranking");
  }
  return ap / static_cast<double>(relevant.size());
}

void RetrievalTask::validate() const {
  if (queries.empty() || candidates.empty()) {
    throw Error(ErrorCode::Data, "retrieval task '" + name + "' is empty");
  }
  std::unordered_set<std::string> ids;
  for (const auto& c : candidates) {
    if (!ids.insert(c.video_id).second) {
      throw Error(ErrorCode::Data, "duplicate candidate id: " + c.video_id);
    }
  }
  for (const auto& q : queries) {
    if (q.relevant_video_ids.empty()) {
      throw Error(ErrorCode::Data, "retrieval query with empty relevant set");
    }
    for (const auto& id : q.relevant_video_ids) {
      if (!ids.count(id)) {
        throw Error(ErrorCode::Data, "relevant id not among candidates: " + id);
      }
    }
  }
}

RetrievalReport retrieval_map_with(const RetrievalTask& task, const PairScorer& scorer) {
  task.validate();
  RetrievalReport report;
  double ap_sum = 0.0;
  for (size_t qi = 0; qi < task.queries.size(); ++qi) {
    const auto& query = task.queries[qi];
    std::vector<std::pair<double, const std::string*>> scored;
    scored.reserve(task.candidates.size());
    for (const auto& cand : task.candidates) {
      const double s = scorer(cand.feature_tokens, query.caption);
      scored.emplace_back(s, &cand.video_id);
      report.scores.push_back({static_cast<int>(qi), cand.video_id, s});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return *a.second < *b.second;  // deterministic tie-break: ascending id
    });
    std::vector<std::string> ranking;
    ranking.reserve(scored.size());
    for (const auto& [s, id] : scored) ranking.push_back(*id);
    const std::unordered_set<std::string> relevant(query.relevant_video_ids.begin(),
                                                   query.relevant_video_ids.end());
    const double ap = average_precision(ranking, relevant);
    report.per_query_ap.push_back(ap);
    ap_sum += ap;
  }
  report.map = ap_sum / static_cast<double>(task.queries.size());
  return report;
}

RetrievalReport retrieval_map(const ModelParams& params, const Lexicon& lex,
                              const RetrievalTask& task) {
  return retrieval_map_with(task, model_scorer(params, lex));
}

namespace {

double token_f1(std::span<const TokenId> prediction, std::span<const TokenId> truth) {
  if (prediction.empty() || truth.empty()) return 0.0;
  std::map<TokenId, int> truth_counts;
  for (TokenId t : truth) ++truth_counts[t];
  int overlap = 0;
  for (TokenId t : prediction) {
    auto it = truth_counts.find(t);
    if (it != truth_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return 2.0 * overlap / static_cast<double>(prediction.size() + truth.size());
}

}  // namespace

CorrectionScores score_correction(std::span<const TokenId> generated,
                                  std::span<const TokenId> truth,
                                  std::span<const Event> video_events, const Lexicon& lex) {
  CorrectionScores scores;
  // The known failure mode: asserting that the incorrect caption is accurate.
  if (!generated.empty() && generated.front() == special::kYes) return scores;

  std::vector<TokenId> candidate(generated.begin(), generated.end());
  const auto prefix = haca_no_prefix(lex);
  if (candidate.size() >= prefix.size() &&
      std::equal(prefix.begin(), prefix.end(), candidate.begin())) {
    candidate.erase(candidate.begin(), candidate.begin() + static_cast<long>(prefix.size()));
  }

  scores.exact_match = candidate.size() == truth.size() &&
                       std::equal(candidate.begin(), candidate.end(), truth.begin());
  scores.token_f1 = token_f1(candidate, truth);
  try {
    const auto parsed = parse_caption(candidate, lex);
    scores.parse_fix = parsed.events == std::vector<Event>(video_events.begin(), video_events.end());
  } catch (const ParseError&) {
    scores.parse_fix = false;
  }
  return scores;
}

CorrectionReport correction_quality(const ModelParams& params, const Lexicon& lex,
                                    std::span<const CorrectionItem> items) {
  if (items.empty()) throw Error(ErrorCode::Data, "empty correction item list");
  CorrectionReport report;
  report.items = static_cast<int>(items.size());
  // Long enough for the No-prefix plus a full three-event caption.
  const int max_new = static_cast<int>(haca_no_prefix(lex).size()) + 3 * 7 + 4;
  for (const auto& item : items) {
    const auto question = format_entailment_question(item.corrupted, lex);
    const auto generated = generate(params, item.feature_tokens, question, max_new);
    const auto scores = score_correction(generated, item.truth, item.events, lex);
    report.exact_match_rate += scores.exact_match ? 1.0 : 0.0;
    report.token_f1 += scores.token_f1;
    report.parse_fix_rate += scores.parse_fix ? 1.0 : 0.0;
  }
  report.exact_match_rate /= report.items;
  report.token_f1 /= report.items;
  report.parse_fix_rate /= report.items;
  return report;
}

void write_retrieval_task_json(const RetrievalTask& task, const std::string& path) {
  json queries = json::array();
  for (const auto& q : task.queries) {
    queries.push_back({{"caption", q.caption}, {"relevant", q.relevant_video_ids}});
  }
  json candidates = json::array();
  for (const auto& c : task.candidates) {
    candidates.push_back({{"video_id", c.video_id}, {"feature_tokens", c.feature_tokens}});
  }
  const json j{{"name", task.name}, {"queries", queries}, {"candidates", candidates}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Data, "cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Data, "write failed: " + path);
}

RetrievalTask load_retrieval_task_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Data, "cannot open retrieval task: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Data, path + ": " + e.what());
  }
  RetrievalTask task;
  task.name = j.at("name").get<std::string>();
  for (const auto& q : j.at("queries")) {
    RetrievalQuery query;
    query.caption = q.at("caption").get<std::vector<TokenId>>();
    query.relevant_video_ids = q.at("relevant").get<std::vector<std::string>>();
    task.queries.push_back(std::move(query));
  }
  for (const auto& c : j.at("candidates")) {
    RetrievalCandidate cand;
    cand.video_id = c.at("video_id").get<std::string>();
    cand.feature_tokens = c.at("feature_tokens").get<std::vector<TokenId>>();
    task.candidates.push_back(std::move(cand));
  }
  task.validate();
  return task;
}

namespace {

json binding_to_json(const BindingReport& b) {
  json per_category = json::object();
  for (const auto& [name, cat] : b.per_category) {
    per_category[name] = {{"trials", cat.trials},
                          {"successes", cat.successes},
                          {"accuracy", cat.accuracy}};
  }
  return {{"per_category", per_category},
          {"macro_avg", b.macro_avg},
          {"micro_avg", b.micro_avg},
          {"total_trials", b.total_trials},
          {"warnings", b.warnings}};
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report) {
  json retrieval = json::object();
  for (const auto& [name, r] : report.retrieval) {
    retrieval[name] = {{"map", r.map}, {"per_query_ap", r.per_query_ap}};
  }
  const json j{{"metadata",
                {{"checkpoint_id", report.checkpoint_id},
                 {"objective", report.objective},
                 {"seed", report.seed},
                 {"dataset_hash", report.dataset_hash},
                 {"config_hash", report.config_hash}}},
               {"binding", binding_to_json(report.binding)},
               {"retrieval", retrieval},
               {"correction",
                {{"exact_match_rate", report.correction.exact_match_rate},
                 {"token_f1", report.correction.token_f1},
                 {"parse_fix_rate", report.correction.parse_fix_rate},
                 {"items", report.correction.items}}}};
  return j.dump(2) + "\n";
}

std::string eval_report_to_text(const EvalReport& report) {
  char buf[160];
  std::string out;
  out += "objective: " + report.objective + "  seed: " + std::to_string(report.seed) + "\n";
  out += "checkpoint: " + report.checkpoint_id + "  dataset: " + report.dataset_hash + "\n\n";
  out += "binding accuracy (x100, strict ties-fail)\n";
  for (const auto& [name, cat] : report.binding.per_category) {
    std::snprintf(buf, sizeof(buf), "  %-22s %6.1f  (%d trials)\n", name.c_str(),
                  100.0 * cat.accuracy, cat.trials);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "  %-22s %6.1f\n", "macro_avg", 100.0 * report.binding.macro_avg);
  out += buf;
  std::snprintf(buf, sizeof(buf), "  %-22s %6.1f\n\n", "micro_avg", 100.0 * report.binding.micro_avg);
  out += buf;
  out += "retrieval mAP (x100)\n";
  for (const auto& [name, r] : report.retrieval) {
    std::snprintf(buf, sizeof(buf), "  %-22s %6.1f  (%zu queries)\n", name.c_str(), 100.0 * r.map,
                  r.per_query_ap.size());
    out += buf;
  }
  out += "\ncorrection quality\n";
  std::snprintf(buf, sizeof(buf), "  exact_match %6.3f  token_f1 %6.3f  parse_fix %6.3f  (%d items)\n",
                report.correction.exact_match_rate, report.correction.token_f1,
                report.correction.parse_fix_rate, report.correction.items);
  out += buf;
  for (const auto& w : report.binding.warnings) out += "warning: " + w + "\n";
  return out;
}

}  // namespace haca
