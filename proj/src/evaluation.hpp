#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "corruption.hpp"
#include "model.hpp"
#include "worldgen.hpp"

namespace haca {

// Scores one (video features, caption) pair; higher means "more entailed".
using PairScorer = std::function<double(std::span<const TokenId> features,
                                        std::span<const TokenId> caption)>;

// Resolves binding-test video ids to their feature tokens (and events, for
// the parse oracle).
class VideoLookup {
 public:
  explicit VideoLookup(const Corpus& corpus);
  const VideoRecord& at(const std::string& video_id) const;

 private:
  std::unordered_map<std::string, const VideoRecord*> by_id_;
};

PairScorer model_scorer(const ModelParams& params, const Lexicon& lex);

struct BindingCategoryResult {
  int trials = 0;
  int successes = 0;
  double accuracy = 0.0;
};

struct BindingReport {
  std::map<std::string, BindingCategoryResult> per_category;
  double macro_avg = 0.0;  // mean over categories (the headline number)
  double micro_avg = 0.0;  // success fraction over all trials
  int total_trials = 0;
  std::vector<std::string> warnings;  // empty categories are omitted with a warning
};

// Success iff the positive caption scores strictly higher than the negative;
// ties count as failures.
BindingReport binding_accuracy_with(std::span<const BindingTest> tests, const VideoLookup& videos,
                                    const PairScorer& scorer);
BindingReport binding_accuracy(const ModelParams& params, const Lexicon& lex,
                               std::span<const BindingTest> tests, const VideoLookup& videos);

// AP = (1/|relevant|) * sum over relevant ranks k of precision@k.
double average_precision(std::span<const std::string> ranking,
                         const std::unordered_set<std::string>& relevant);

struct RetrievalQuery {
  std::vector<TokenId> caption;
  std::vector<std::string> relevant_video_ids;
};

struct RetrievalCandidate {
  std::string video_id;
  std::vector<TokenId> feature_tokens;
};

struct RetrievalTask {
  std::string name;
  std::vector<RetrievalQuery> queries;
  std::vector<RetrievalCandidate> candidates;

  void validate() const;
};

struct ScoredPair {
  int query_index = 0;
  std::string video_id;
  double score = 0.0;
};

struct RetrievalReport {
  double map = 0.0;
  std::vector<double> per_query_ap;
  std::vector<ScoredPair> scores;  // raw per-pair scores, for --scores-out
};

// Candidates ranked per query by descending score, ties broken by ascending
// video id.
RetrievalReport retrieval_map_with(const RetrievalTask& task, const PairScorer& scorer);
RetrievalReport retrieval_map(const ModelParams& params, const Lexicon& lex,
                              const RetrievalTask& task);

struct CorrectionItem {
  std::string video_id;
  std::vector<TokenId> feature_tokens;
  std::vector<Event> events;
  std::vector<TokenId> corrupted;
  std::vector<TokenId> truth;
};

struct CorrectionScores {
  bool exact_match = false;
  double token_f1 = 0.0;
  bool parse_fix = false;
};

// Scores a generated response against the truth caption: a response opening
// with the Yes-answer counts as a failure on all three metrics; the
// "No. ... corrected as:" prefix is stripped before comparison.
CorrectionScores score_correction(std::span<const TokenId> generated,
                                  std::span<const TokenId> truth,
                                  std::span<const Event> video_events, const Lexicon& lex);

struct CorrectionReport {
  double exact_match_rate = 0.0;
  double token_f1 = 0.0;
  double parse_fix_rate = 0.0;
  int items = 0;
};

CorrectionReport correction_quality(const ModelParams& params, const Lexicon& lex,
                                    std::span<const CorrectionItem> items);

struct EvalReport {
  // metadata
  std::string checkpoint_id;
  std::string objective;
  uint64_t seed = 0;
  std::string dataset_hash;
  std::string config_hash;

  BindingReport binding;
  std::map<std::string, RetrievalReport> retrieval;  // task name -> report
  CorrectionReport correction;
};

void write_retrieval_task_json(const RetrievalTask& task, const std::string& path);
RetrievalTask load_retrieval_task_json(const std::string& path);

std::string eval_report_to_json(const EvalReport& report);
std::string eval_report_to_text(const EvalReport& report);

}  // namespace haca
