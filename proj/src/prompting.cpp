#include "prompting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "error.hpp"
#include "json.hpp"

namespace haca {

using nlohmann::json;

namespace {

// The templates, defined once. Word-level tokens; "?" "." "," ":" stand alone.
constexpr std::string_view kEntailQuestionPrefix =
    "Does this caption accurately describe the video ? Caption :";
constexpr std::string_view kMaskQuestionPrefix =
    "Please correct this caption to accurately describe the video . Caption :";
// First token of each answer is the YES / NO token itself ("Yes" / "No").
constexpr std::string_view kYesAnswerTail = ", the caption accurately describes the video";
constexpr std::string_view kNoAnswerTail = ". This caption shall be corrected as :";

std::vector<TokenId> format_with_prefix(std::string_view prefix, std::span<const TokenId> caption,
                                        const Lexicon& lex) {
  if (caption.empty()) {
    throw Error(ErrorCode::Usage, "cannot format a question for an empty caption");
  }
  std::vector<TokenId> out = lex.tokenize(prefix);
  out.insert(out.end(), caption.begin(), caption.end());
  return out;
}

bool starts_with(std::span<const TokenId> tokens, std::span<const TokenId> prefix) {
  return tokens.size() >= prefix.size() &&
         std::equal(prefix.begin(), prefix.end(), tokens.begin());
}

}  // namespace

std::string_view task_kind_name(TaskKind task) {
  switch (task) {
    case TaskKind::Pretrain: return "pretrain";
    case TaskKind::Entailment: return "entailment";
    case TaskKind::Haca: return "haca";
    case TaskKind::MaskCorrection: return "mask_correction";
  }
  throw Error(ErrorCode::Internal, "bad task kind");
}

TaskKind task_kind_from_name(std::string_view name) {
  if (name == "pretrain") return TaskKind::Pretrain;
  if (name == "entailment") return TaskKind::Entailment;
  if (name == "haca") return TaskKind::Haca;
  if (name == "mask_correction") return TaskKind::MaskCorrection;
  throw Error(ErrorCode::Data, "unknown task kind: " + std::string(name));
}

std::vector<TokenId> format_entailment_question(std::span<const TokenId> caption, const Lexicon& lex) {
  return format_with_prefix(kEntailQuestionPrefix, caption, lex);
}

std::vector<TokenId> format_mask_question(std::span<const TokenId> masked, const Lexicon& lex) {
  return format_with_prefix(kMaskQuestionPrefix, masked, lex);
}

std::vector<TokenId> extract_question_caption(std::span<const TokenId> question, const Lexicon& lex) {
  for (std::string_view prefix : {kEntailQuestionPrefix, kMaskQuestionPrefix}) {
    const auto prefix_ids = lex.tokenize(prefix);
    if (starts_with(question, prefix_ids)) {
      return {question.begin() + static_cast<long>(prefix_ids.size()), question.end()};
    }
  }
  throw Error(ErrorCode::Data, "question does not start with a known template");
}

std::vector<TokenId> format_haca_answer(bool entails,
                                        const std::optional<std::vector<TokenId>>& correction,
                                        const Lexicon& lex) {
  if (entails && correction) {
    throw Error(ErrorCode::Usage, "entailing answer must not carry a correction");
  }
  if (!entails && !correction) {
    throw Error(ErrorCode::Usage, "non-entailing answer requires a correction");
  }
  std::vector<TokenId> out;
  if (entails) {
    out.push_back(special::kYes);
    const auto tail = lex.tokenize(kYesAnswerTail);
    out.insert(out.end(), tail.begin(), tail.end());
  } else {
    out.push_back(special::kNo);
    const auto tail = lex.tokenize(kNoAnswerTail);
    out.insert(out.end(), tail.begin(), tail.end());
    out.insert(out.end(), correction->begin(), correction->end());
  }
  out.push_back(special::kEos);
  return out;
}

std::vector<TokenId> format_entailment_answer(bool yes) {
  return {yes ? special::kYes : special::kNo, special::kEos};
}

std::vector<TokenId> haca_no_prefix(const Lexicon& lex) {
  std::vector<TokenId> out{special::kNo};
  const auto tail = lex.tokenize(kNoAnswerTail);
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

std::vector<TokenId> haca_yes_answer_body(const Lexicon& lex) {
  std::vector<TokenId> out{special::kYes};
  const auto tail = lex.tokenize(kYesAnswerTail);
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

std::string_view objective_task_name(ObjectiveConfig::Task task) {
  switch (task) {
    case ObjectiveConfig::Task::Pretrain: return "pretrain";
    case ObjectiveConfig::Task::Entailment: return "entail";
    case ObjectiveConfig::Task::Haca: return "haca";
    case ObjectiveConfig::Task::HacaPlusMask: return "haca+mask";
    case ObjectiveConfig::Task::EntailPlusMask: return "entail+mask";
  }
  throw Error(ErrorCode::Internal, "bad objective task");
}

ObjectiveConfig::Task objective_task_from_name(std::string_view name) {
  if (name == "pretrain") return ObjectiveConfig::Task::Pretrain;
  if (name == "entail") return ObjectiveConfig::Task::Entailment;
  if (name == "haca") return ObjectiveConfig::Task::Haca;
  if (name == "haca+mask") return ObjectiveConfig::Task::HacaPlusMask;
  if (name == "entail+mask") return ObjectiveConfig::Task::EntailPlusMask;
  throw Error(ErrorCode::Usage, "unknown objective: '" + std::string(name) +
                                    "' (expected pretrain, entail, haca, haca+mask or entail+mask)");
}

namespace {

TrainingExample base_example(const VideoRecord& rec) {
  TrainingExample ex;
  ex.video_id = rec.video.video_id;
  ex.feature_tokens = rec.video.feature_tokens;
  return ex;
}

std::vector<TrainingExample> build_pair_examples(const Corpus& corpus,
                                                 std::span<const size_t> indices, bool haca,
                                                 const ObjectiveConfig& objective, Rng& rng) {
  std::vector<TrainingExample> out;
  const TaskKind task = haca ? TaskKind::Haca : TaskKind::Entailment;

  for (size_t idx : indices) {
    const auto& rec = corpus.records[idx];
    TrainingExample ex = base_example(rec);
    ex.task = task;
    ex.label = ExampleLabel::Positive;
    ex.question = format_entailment_question(rec.truth, corpus.lexicon);
    ex.answer = haca ? format_haca_answer(true, std::nullopt, corpus.lexicon)
                     : format_entailment_answer(true);
    out.push_back(std::move(ex));
  }

  const auto n_neg = static_cast<size_t>(
      std::llround(static_cast<double>(indices.size()) / objective.pos_neg_ratio));
  for (size_t i = 0; i < n_neg; ++i) {
    const auto& rec = corpus.records[indices[i % indices.size()]];
    const CorruptionKind kind =
        sample_applicable_kind(rec.video, objective.corruption_weights, rng);
    const auto corrupted = corrupt(rec.truth, kind, rec.video, corpus.lexicon, rng).corrupted;

    TrainingExample ex = base_example(rec);
    ex.task = task;
    ex.label = ExampleLabel::Negative;
    ex.question = format_entailment_question(corrupted, corpus.lexicon);
    ex.answer = haca ? format_haca_answer(false, rec.truth, corpus.lexicon)
                     : format_entailment_answer(false);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> build_mask_examples(const Corpus& corpus,
                                                 std::span<const size_t> indices, size_t count,
                                                 double mask_ratio, Rng& rng) {
  std::vector<TrainingExample> out;
  for (size_t i = 0; i < count; ++i) {
    const auto& rec = corpus.records[indices[i % indices.size()]];
    const auto masked = mask_caption(rec.truth, mask_ratio, corpus.lexicon, rng);

    TrainingExample ex = base_example(rec);
    ex.task = TaskKind::MaskCorrection;
    ex.question = format_mask_question(masked.masked, corpus.lexicon);
    ex.answer = rec.truth;
    ex.answer.push_back(special::kEos);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

std::vector<TrainingExample> build_training_set(const Corpus& corpus, Split split,
                                                const ObjectiveConfig& objective, Rng& rng) {
  if (objective.pos_neg_ratio <= 0.0) throw Error(ErrorCode::Usage, "pos_neg_ratio must be > 0");
  if (objective.mix_ratio <= 0.0) throw Error(ErrorCode::Usage, "mix_ratio must be > 0");
  if (objective.mask_ratio < 0.0 || objective.mask_ratio > 1.0) {
    throw Error(ErrorCode::Usage, "mask_ratio must be in [0, 1]");
  }
  const auto indices = corpus.split_indices(split);
  if (indices.empty()) {
    throw Error(ErrorCode::Data, std::string("empty corpus split: ") + split_name(split));
  }

  std::vector<TrainingExample> out;
  switch (objective.task) {
    case ObjectiveConfig::Task::Pretrain: {
      for (size_t idx : indices) {
        const auto& rec = corpus.records[idx];
        TrainingExample ex = base_example(rec);
        ex.task = TaskKind::Pretrain;
        ex.answer = rec.truth;
        ex.answer.push_back(special::kEos);
        out.push_back(std::move(ex));
      }
      break;
    }
    case ObjectiveConfig::Task::Entailment:
      out = build_pair_examples(corpus, indices, /*haca=*/false, objective, rng);
      break;
    case ObjectiveConfig::Task::Haca:
      out = build_pair_examples(corpus, indices, /*haca=*/true, objective, rng);
      break;
    case ObjectiveConfig::Task::HacaPlusMask:
    case ObjectiveConfig::Task::EntailPlusMask: {
      const bool haca = objective.task == ObjectiveConfig::Task::HacaPlusMask;
      out = build_pair_examples(corpus, indices, haca, objective, rng);
      const auto n_mask = static_cast<size_t>(
          std::llround(static_cast<double>(out.size()) / objective.mix_ratio));
      auto mask_examples = build_mask_examples(corpus, indices, n_mask, objective.mask_ratio, rng);
      out.insert(out.end(), std::make_move_iterator(mask_examples.begin()),
                 std::make_move_iterator(mask_examples.end()));
      break;
    }
  }
  rng.shuffle(out);
  return out;
}

void write_training_set_jsonl(std::span<const TrainingExample> examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Data, "cannot open for writing: " + path);
  for (const auto& ex : examples) {
    json j{{"video_id", ex.video_id},
           {"feature_tokens", ex.feature_tokens},
           {"question", ex.question},
           {"answer", ex.answer},
           {"task", std::string(task_kind_name(ex.task))}};
    j["label"] = ex.label ? json(*ex.label == ExampleLabel::Positive ? "positive" : "negative")
                          : json(nullptr);
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::Data, "write failed: " + path);
}

void write_training_set_text(std::span<const TrainingExample> examples, const Lexicon& lex,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Data, "cannot open for writing: " + path);
  for (const auto& ex : examples) {
    out << "# " << ex.video_id << " task=" << task_kind_name(ex.task);
    if (ex.label) out << " label=" << (*ex.label == ExampleLabel::Positive ? "positive" : "negative");
    out << '\n';
    out << "Q: " << (ex.question.empty() ? "(none)" : lex.render(ex.question)) << '\n';
    out << "A: " << lex.render(ex.answer) << "\n\n";
  }
  if (!out) throw Error(ErrorCode::Data, "write failed: " + path);
}

}  // namespace haca
