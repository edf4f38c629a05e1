#include "haca/haca.h"

#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "experiment.hpp"
#include "prompting.hpp"

namespace {

thread_local std::string t_last_error;

haca_status to_status(haca::ErrorCode code) {
  switch (code) {
    case haca::ErrorCode::Usage: return HACA_ERR_USAGE;
    case haca::ErrorCode::Data: return HACA_ERR_DATA;
    case haca::ErrorCode::Training: return HACA_ERR_TRAINING;
    case haca::ErrorCode::Comparability: return HACA_ERR_COMPARABILITY;
    case haca::ErrorCode::Internal: return HACA_ERR_INTERNAL;
  }
  return HACA_ERR_INTERNAL;
}

template <typename Fn>
haca_status guarded(Fn&& fn) {
  try {
    fn();
    t_last_error.clear();
    return HACA_OK;
  } catch (const haca::Error& e) {
    t_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return HACA_ERR_INTERNAL;
  }
}

haca_status require(bool condition, const char* message) {
  if (condition) return HACA_OK;
  t_last_error = message;
  return HACA_ERR_USAGE;
}

haca::ProgressFn wrap_progress(haca_progress_fn progress, void* user) {
  if (!progress) return nullptr;
  return [progress, user](const std::string& line) { progress(line.c_str(), user); };
}

}  // namespace

struct haca_model {
  haca::Checkpoint checkpoint;
  haca::Lexicon lexicon;
};

extern "C" {

const char* haca_version(void) { return "0.1.0"; }

const char* haca_last_error(void) { return t_last_error.c_str(); }

haca_status haca_gen_data(const char* config_path, const char* out_dir, int has_seed,
                          uint64_t seed) {
  if (auto s = require(out_dir != nullptr, "out_dir is required"); s != HACA_OK) return s;
  return guarded([&] {
    auto cfg = config_path ? haca::ExperimentConfig::load(config_path)
                           : haca::ExperimentConfig::defaults();
    if (has_seed) cfg.seed = seed;
    haca::pipeline_gen_data(cfg, out_dir);
  });
}

haca_status haca_train(const char* config_path, const char* data_dir, const char* objective,
                       const char* out_dir, int has_seed, uint64_t seed, int has_mask_ratio,
                       double mask_ratio, int dump_text, haca_progress_fn progress, void* user) {
  if (auto s = require(data_dir && objective && out_dir,
                       "data_dir, objective and out_dir are required");
      s != HACA_OK) {
    return s;
  }
  return guarded([&] {
    haca::pipeline_train(config_path ? std::optional<std::string>(config_path) : std::nullopt,
                         data_dir, objective,
                         has_mask_ratio ? std::optional<double>(mask_ratio) : std::nullopt,
                         has_seed ? std::optional<uint64_t>(seed) : std::nullopt, out_dir,
                         dump_text != 0, wrap_progress(progress, user));
  });
}

haca_status haca_eval(const char* checkpoint_path, const char* data_dir, const char* out_dir,
                      const char* scores_out_path) {
  if (auto s = require(checkpoint_path && data_dir && out_dir,
                       "checkpoint_path, data_dir and out_dir are required");
      s != HACA_OK) {
    return s;
  }
  return guarded([&] {
    haca::pipeline_eval(checkpoint_path, data_dir, out_dir,
                        scores_out_path ? std::optional<std::string>(scores_out_path)
                                        : std::nullopt);
  });
}

haca_status haca_ablate_mask(const char* config_path, const char* data_dir, const double* ratios,
                             size_t ratio_count, const char* out_dir, haca_progress_fn progress,
                             void* user) {
  if (auto s = require(data_dir && out_dir && (ratios || ratio_count == 0),
                       "data_dir, out_dir and ratios are required");
      s != HACA_OK) {
    return s;
  }
  return guarded([&] {
    haca::pipeline_ablate_mask(config_path ? std::optional<std::string>(config_path) : std::nullopt,
                               data_dir, std::span<const double>(ratios, ratio_count), out_dir,
                               wrap_progress(progress, user));
  });
}

haca_status haca_compare(const char* const* report_paths, size_t report_count,
                         const char* out_dir) {
  if (auto s = require(report_paths != nullptr && out_dir != nullptr,
                       "report_paths and out_dir are required");
      s != HACA_OK) {
    return s;
  }
  return guarded([&] {
    std::vector<std::string> paths(report_paths, report_paths + report_count);
    haca::pipeline_compare(paths, out_dir);
  });
}

haca_status haca_model_open(const char* checkpoint_path, haca_model** out_model) {
  if (auto s = require(checkpoint_path && out_model, "checkpoint_path and out_model are required");
      s != HACA_OK) {
    return s;
  }
  *out_model = nullptr;
  return guarded([&] {
    auto checkpoint = haca::load_checkpoint(checkpoint_path);
    // Template word ids precede the content classes, so they are the same for
    // every lexicon; a minimal one is enough to build questions.
    auto* model = new haca_model{std::move(checkpoint), haca::Lexicon::build(8, 8, 8, 8)};
    *out_model = model;
  });
}

void haca_model_close(haca_model* model) { delete model; }

haca_status haca_model_yes_probability(const haca_model* model, const int32_t* video_tokens,
                                       size_t video_len, const int32_t* caption_tokens,
                                       size_t caption_len, double* out_probability) {
  if (auto s = require(model && out_probability && (video_tokens || video_len == 0) &&
                           caption_tokens && caption_len > 0,
                       "model, caption tokens and out_probability are required");
      s != HACA_OK) {
    return s;
  }
  return guarded([&] {
    const std::span<const haca::TokenId> caption(caption_tokens, caption_len);
    const auto question = haca::format_entailment_question(caption, model->lexicon);
    *out_probability = haca::yes_probability(
        model->checkpoint.params, std::span<const haca::TokenId>(video_tokens, video_len),
        question);
  });
}

haca_status haca_model_correct(const haca_model* model, const int32_t* video_tokens,
                               size_t video_len, const int32_t* caption_tokens, size_t caption_len,
                               int32_t* out_tokens, size_t out_capacity, size_t* out_len) {
  if (auto s = require(model && out_tokens && out_len && caption_tokens && caption_len > 0,
                       "model, caption tokens and output buffer are required");
      s != HACA_OK) {
    return s;
  }
  return guarded([&] {
    const std::span<const haca::TokenId> caption(caption_tokens, caption_len);
    const auto question = haca::format_entailment_question(caption, model->lexicon);
    const int max_new = model->checkpoint.params.config.max_seq_len -
                        static_cast<int>(video_len + question.size());
    if (max_new < 1) throw haca::Error(haca::ErrorCode::Usage, "input exceeds max_seq_len");
    const auto generated =
        haca::generate(model->checkpoint.params,
                       std::span<const haca::TokenId>(video_tokens, video_len), question, max_new);
    if (generated.size() > out_capacity) {
      throw haca::Error(haca::ErrorCode::Usage,
                        "output buffer too small: need " + std::to_string(generated.size()));
    }
    std::copy(generated.begin(), generated.end(), out_tokens);
    *out_len = generated.size();
  });
}

}  // extern "C"
