#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corruption.hpp"
#include "model.hpp"
#include "prompting.hpp"

namespace haca {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;  // <= 0 disables clipping
  uint64_t seed = 42;
  std::string selection_metric = "val_binding_accuracy";

  void validate() const;
};

EncodedExample encode_example(const TrainingExample& example);

struct BatchLoss {
  double loss = 0.0;     // mean over examples of -log_likelihood(answer)
  ModelParams grads;     // same registry as the params; zeros for frozen tensors
};

// Forward + reverse-mode backward through the fixed architecture.
BatchLoss loss_batch(const ModelParams& params, std::span<const EncodedExample> batch);
double loss_batch_value(const ModelParams& params, std::span<const EncodedExample> batch);

// Adaptive moments with decoupled weight decay; global gradient-norm clipping
// before the update; frozen tensors untouched. Updated parameters are snapped
// to the fp32 grid so checkpoints round-trip losslessly.
class AdamW {
 public:
  AdamW(const TrainConfig& config, const ModelParams& shape);

  void step(ModelParams& params, const ModelParams& grads);
  int64_t step_count() const { return step_count_; }

 private:
  TrainConfig config_;
  ModelParams m_;
  ModelParams v_;
  int64_t step_count_ = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_binding_accuracy = 0.0;
};

struct TrainReport {
  std::string objective;
  uint64_t seed = 0;
  std::string selection_metric;
  double initial_train_loss = 0.0;
  std::vector<EpochStats> epochs;
  int selected_epoch = -1;  // -1 when epochs == 0
  bool diverged = false;
  double wall_clock_seconds = 0.0;
};

struct TrainResult {
  ModelParams params;  // checkpoint with best validation selection metric
  TrainReport report;
};

using ProgressFn = std::function<void(const std::string& line)>;

// Deterministic for fixed seeds: data assembly, init and per-epoch shuffles
// all derive from tcfg.seed. On divergence the last finite-epoch checkpoint
// is returned with report.diverged set.
TrainResult train(const Corpus& corpus, const ObjectiveConfig& objective, const TrainConfig& tcfg,
                  const ModelConfig& mcfg, std::span<const BindingTest> val_tests,
                  const ProgressFn& progress = nullptr);

}  // namespace haca
