#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corruption.hpp"
#include "masking.hpp"
#include "worldgen.hpp"

namespace haca {

// Integer codes are the serialization contract; do not reorder.
enum class TaskKind : int32_t {
  Pretrain = 0,
  Entailment = 1,
  Haca = 2,
  MaskCorrection = 3,
};

enum class ExampleLabel : int32_t { Negative = 0, Positive = 1 };

std::string_view task_kind_name(TaskKind task);
TaskKind task_kind_from_name(std::string_view name);

struct TrainingExample {
  std::string video_id;
  std::vector<TokenId> feature_tokens;
  std::vector<TokenId> question;
  std::vector<TokenId> answer;  // non-empty, EOS-terminated
  TaskKind task = TaskKind::Pretrain;
  std::optional<ExampleLabel> label;  // present iff task is Entailment or Haca
};

// "Does this caption accurately describe the video? Caption: {W}"
std::vector<TokenId> format_entailment_question(std::span<const TokenId> caption, const Lexicon& lex);
// "Please correct this caption to accurately describe the video. Caption: {W}"
std::vector<TokenId> format_mask_question(std::span<const TokenId> masked, const Lexicon& lex);
// Recovers the caption from either question form.
std::vector<TokenId> extract_question_caption(std::span<const TokenId> question, const Lexicon& lex);

// entails -> "Yes, the caption accurately describes the video"
// else    -> "No. This caption shall be corrected as: {correction}"
// Both EOS-terminated; the first token is the YES / NO answer token.
std::vector<TokenId> format_haca_answer(bool entails,
                                        const std::optional<std::vector<TokenId>>& correction,
                                        const Lexicon& lex);
// Single-token Yes / No answer, EOS-terminated.
std::vector<TokenId> format_entailment_answer(bool yes);

// The "No. ... corrected as:" prefix without the correction; used to strip
// generated corrections.
std::vector<TokenId> haca_no_prefix(const Lexicon& lex);
std::vector<TokenId> haca_yes_answer_body(const Lexicon& lex);

struct ObjectiveConfig {
  enum class Task { Pretrain, Entailment, Haca, HacaPlusMask, EntailPlusMask };

  Task task = Task::Haca;
  double mask_ratio = 0.45;
  // primary-task : mask-correction example count ratio
  double mix_ratio = 1.0;
  // positive : negative example count ratio
  double pos_neg_ratio = 1.0;
  // Indexed by CorruptionKind code. AgentSwap defaults to 0: that
  // misalignment type stays out of training and is probed at test time only.
  std::array<double, kCorruptionKindCount> corruption_weights = {1, 1, 1, 0, 1, 1, 1};
};

std::string_view objective_task_name(ObjectiveConfig::Task task);
ObjectiveConfig::Task objective_task_from_name(std::string_view name);

std::vector<TrainingExample> build_training_set(const Corpus& corpus, Split split,
                                                const ObjectiveConfig& objective, Rng& rng);

void write_training_set_jsonl(std::span<const TrainingExample> examples, const std::string& path);
// Human-readable rendering (the --dump-text form).
void write_training_set_text(std::span<const TrainingExample> examples, const Lexicon& lex,
                             const std::string& path);

}  // namespace haca
