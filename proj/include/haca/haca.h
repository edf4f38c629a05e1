/* haca — hallucination-correction training experiments on synthetic
 * video-caption data.
 *
 * C interface to the shared library. All functions return haca_status;
 * on failure haca_last_error() holds a human-readable message for the
 * calling thread. Strings passed in are borrowed; strings returned are
 * owned by the library and valid until the next call on the same thread.
 */
#ifndef HACA_H
#define HACA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum haca_status {
  HACA_OK = 0,
  HACA_ERR_USAGE = 1,
  HACA_ERR_DATA = 2,
  HACA_ERR_TRAINING = 3,
  HACA_ERR_COMPARABILITY = 4,
  HACA_ERR_INTERNAL = 5
} haca_status;

const char* haca_version(void);

/* Message for the most recent failure on this thread; empty string if none. */
const char* haca_last_error(void);

/* Receives one progress line (no trailing newline). May be NULL. */
typedef void (*haca_progress_fn)(const char* line, void* user);

/* Generates corpus, binding test sets and retrieval tasks under out_dir,
 * together with the resolved config and a manifest of content hashes.
 * config_path may be NULL to use built-in defaults. */
haca_status haca_gen_data(const char* config_path, const char* out_dir,
                          int has_seed, uint64_t seed);

/* Trains one objective ("pretrain", "entail", "haca", "haca+mask",
 * "entail+mask") on the datasets in data_dir. config_path may be NULL to use
 * the config stored with the data. Writes checkpoint.bin, train_report.json
 * and the resolved config under out_dir; dump_text additionally writes the
 * assembled training set in token and text form. Returns HACA_ERR_TRAINING
 * if the run diverged (the last good checkpoint is still written). */
haca_status haca_train(const char* config_path, const char* data_dir, const char* objective,
                       const char* out_dir, int has_seed, uint64_t seed, int has_mask_ratio,
                       double mask_ratio, int dump_text, haca_progress_fn progress, void* user);

/* Evaluates a checkpoint against the test sets in data_dir; writes
 * eval_report.json / eval_report.txt under out_dir. scores_out_path (may be
 * NULL) additionally dumps raw per-pair Yes-probabilities as JSONL. Refuses
 * checkpoints trained on different data. */
haca_status haca_eval(const char* checkpoint_path, const char* data_dir, const char* out_dir,
                      const char* scores_out_path);

/* One haca+mask run per (ratio, seed) over the shared datasets; writes
 * ablate.json / ablate.txt under out_dir. */
haca_status haca_ablate_mask(const char* config_path, const char* data_dir, const double* ratios,
                             size_t ratio_count, const char* out_dir, haca_progress_fn progress,
                             void* user);

/* Per-category deltas of each eval report against the first; refuses reports
 * produced on different test sets. Writes compare.json / compare.txt. */
haca_status haca_compare(const char* const* report_paths, size_t report_count,
                         const char* out_dir);

/* Opaque handle to a loaded model checkpoint. */
typedef struct haca_model haca_model;

haca_status haca_model_open(const char* checkpoint_path, haca_model** out_model);
void haca_model_close(haca_model* model);

/* Renormalized P(Yes) for "does this caption describe the video", from the
 * model's first-answer-token distribution. caption_tokens are caption token
 * ids as found in the dataset files (the entailment question is built
 * internally). */
haca_status haca_model_yes_probability(const haca_model* model, const int32_t* video_tokens,
                                       size_t video_len, const int32_t* caption_tokens,
                                       size_t caption_len, double* out_probability);

/* Greedy response to the entailment question for the given caption. Writes up
 * to out_capacity tokens and the true length to out_len; fails with
 * HACA_ERR_USAGE when the buffer is too small. */
haca_status haca_model_correct(const haca_model* model, const int32_t* video_tokens,
                               size_t video_len, const int32_t* caption_tokens, size_t caption_len,
                               int32_t* out_tokens, size_t out_capacity, size_t* out_len);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* HACA_H */
