#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "error.hpp"
#include "training.hpp"

using namespace haca;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_seq_len = 24;
  cfg.text_vocab_size = 20;
  cfg.visual_vocab_size = 8;
  cfg.seed = 3;
  return cfg;
}

// Generic point with healthy gradient magnitudes everywhere.
ModelParams random_point(const ModelConfig& cfg, uint64_t seed) {
  ModelParams params = ModelParams::init(cfg);
  Rng rng(seed);
  for (auto& ref : params.registry()) {
    if (!ref.trainable) continue;
    const bool is_gamma = ref.name.find("gamma") != std::string::npos;
    for (size_t i = 0; i < ref.size(); ++i) {
      ref.data[i] = (is_gamma ? 1.0 : 0.0) + 0.3 * rng.gaussian();
    }
  }
  params.snap_to_f32();
  return params;
}

std::vector<EncodedExample> random_batch(const ModelConfig& cfg, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<EncodedExample> batch;
  for (int i = 0; i < n; ++i) {
    EncodedExample ex;
    const int nv = 2 + int(rng.below(3));
    const int nq = 2 + int(rng.below(4));
    const int na = 1 + int(rng.below(4));
    for (int k = 0; k < nv; ++k) ex.visual.push_back(TokenId(rng.below(uint64_t(cfg.visual_vocab_size))));
    for (int k = 0; k < nq; ++k) ex.question.push_back(TokenId(rng.below(uint64_t(cfg.text_vocab_size))));
    for (int k = 0; k < na; ++k) ex.answer.push_back(TokenId(1 + rng.below(uint64_t(cfg.text_vocab_size - 1))));
    batch.push_back(std::move(ex));
  }
  return batch;
}

// Central finite differences of the forward-only loss.
double numeric_gradient(ModelParams& params, std::span<const EncodedExample> batch, double* coord) {
  const double x = *coord;
  const double h = 1e-4 * std::max(1.0, std::abs(x));
  *coord = x + h;
  const double up = loss_batch_value(params, batch);
  *coord = x - h;
  const double down = loss_batch_value(params, batch);
  *coord = x;
  return (up - down) / (2.0 * h);
}

// Coordinates where both routes agree on ~zero (e.g. key biases, which drop
// out of the shift-invariant softmax) are dominated by fd noise; the floor
// keeps the ratio meaningful.
double rel_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-5});
  return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  const auto cfg = tiny_config();
  ModelParams params = random_point(cfg, 11);
  const auto batch = random_batch(cfg, 3, 12);
  const BatchLoss bl = loss_batch(params, batch);

  Rng pick(13);
  auto p_refs = params.registry();
  const auto g_refs = bl.grads.registry();
  double worst = 0.0;
  for (size_t i = 0; i < p_refs.size(); ++i) {
    if (!p_refs[i].trainable) continue;
    for (int probe = 0; probe < 6; ++probe) {
      const size_t j = pick.below(p_refs[i].size());
      const double numeric = numeric_gradient(params, batch, p_refs[i].data + j);
      const double analytic = g_refs[i].data[j];
      worst = std::max(worst, rel_error(analytic, numeric));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("frozen visual embedding gets zero gradients") {
  const auto cfg = tiny_config();
  const ModelParams params = random_point(cfg, 21);
  const auto batch = random_batch(cfg, 2, 22);
  const BatchLoss bl = loss_batch(params, batch);
  for (const auto& ref : bl.grads.registry()) {
    if (ref.trainable) continue;
    for (size_t j = 0; j < ref.size(); ++j) CHECK(ref.data[j] == 0.0);
  }
}

TEST_CASE("uniform model loss of a one-token answer is log(vocab)") {
  auto cfg = tiny_config();
  cfg.text_vocab_size = 64;
  ModelParams params = ModelParams::init(cfg);
  for (auto& ref : params.registry()) {
    if (ref.trainable) std::fill(ref.data, ref.data + ref.size(), 0.0);
  }
  EncodedExample ex;
  ex.visual = {1};
  ex.question = {2, 3};
  ex.answer = {5};
  const BatchLoss bl = loss_batch(params, std::vector<EncodedExample>{ex});
  CHECK(bl.loss == doctest::Approx(std::log(64.0)).epsilon(1e-12));
}

TEST_CASE("batched loss equals the mean of singleton losses") {
  const auto cfg = tiny_config();
  const ModelParams params = random_point(cfg, 31);
  const auto batch = random_batch(cfg, 5, 32);
  const double batched = loss_batch(params, batch).loss;
  double sum = 0.0;
  for (const auto& ex : batch) {
    sum += loss_batch(params, std::vector<EncodedExample>{ex}).loss;
  }
  CHECK(batched == doctest::Approx(sum / double(batch.size())).epsilon(1e-12));
}

TEST_CASE("loss is invariant to example order") {
  const auto cfg = tiny_config();
  const ModelParams params = random_point(cfg, 41);
  auto batch = random_batch(cfg, 6, 42);
  const double forward_order = loss_batch(params, batch).loss;
  std::reverse(batch.begin(), batch.end());
  const double reverse_order = loss_batch(params, batch).loss;
  CHECK(forward_order == doctest::Approx(reverse_order).epsilon(1e-12));
}

TEST_CASE("single-token answers: sequence loss equals the whole-answer log-likelihood") {
  const auto cfg = tiny_config();
  const ModelParams params = random_point(cfg, 51);
  Rng rng(52);
  for (int i = 0; i < 100; ++i) {
    auto batch = random_batch(cfg, 1, 1000 + uint64_t(i));
    batch[0].answer.resize(1);
    const double per_token_route = loss_batch(params, batch).loss;
    const double whole_answer_route = -log_likelihood(params, batch[0]);
    CHECK(per_token_route == whole_answer_route);  // bitwise
  }
}

TEST_CASE("adamw fixed point: zero gradients and zero decay change nothing") {
  const auto cfg = tiny_config();
  ModelParams params = random_point(cfg, 61);
  const ModelParams before = params;
  TrainConfig tcfg;
  tcfg.weight_decay = 0.0;
  AdamW opt(tcfg, params);
  const ModelParams grads = ModelParams::zeros_like(params);
  opt.step(params, grads);
  const auto a = params.registry();
  const auto b = before.registry();
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < a[i].size(); ++j) CHECK(a[i].data[j] == b[i].data[j]);
  }
}

TEST_CASE("adamw never touches the frozen visual embedding") {
  const auto cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg);
  const Mat frozen_before = params.visual_embedding;
  TrainConfig tcfg;
  AdamW opt(tcfg, params);
  ModelParams grads = ModelParams::zeros_like(params);
  for (auto& ref : grads.registry()) {
    for (size_t j = 0; j < ref.size(); ++j) ref.data[j] = 0.5;  // even with nonzero "grads"
  }
  opt.step(params, grads);
  for (Eigen::Index r = 0; r < frozen_before.rows(); ++r) {
    for (Eigen::Index c = 0; c < frozen_before.cols(); ++c) {
      CHECK(params.visual_embedding(r, c) == frozen_before(r, c));
    }
  }
}

TEST_CASE("one adamw step matches the closed-form update on f(x) = x^2") {
  const auto cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg);
  params.set_zero();
  // Use a single coordinate as "x"; all other gradients stay zero.
  params.adapter_w(0, 0) = 1.0;
  ModelParams grads = ModelParams::zeros_like(params);
  grads.adapter_w(0, 0) = 2.0;  // d/dx x^2 at x = 1

  TrainConfig tcfg;
  tcfg.learning_rate = 0.1;
  tcfg.weight_decay = 0.0;
  tcfg.grad_clip_norm = 0.0;  // disabled
  AdamW opt(tcfg, params);
  opt.step(params, grads);

  const double m_hat = 2.0;  // (1-b1)*g / (1-b1)
  const double v_hat = 4.0;  // (1-b2)*g^2 / (1-b2)
  const double expected =
      double(float(1.0 - tcfg.learning_rate * (m_hat / (std::sqrt(v_hat) + tcfg.eps))));
  CHECK(params.adapter_w(0, 0) == expected);
  CHECK(params.adapter_w(0, 1) == 0.0);
}

TEST_CASE("gradient clipping rescales to the configured norm") {
  const auto cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg);
  params.set_zero();
  params.adapter_w(0, 0) = 1.0;
  ModelParams grads = ModelParams::zeros_like(params);
  grads.adapter_w(0, 0) = 4.0;  // norm 4 > clip 1 -> effective g = 1

  TrainConfig tcfg;
  tcfg.learning_rate = 0.1;
  tcfg.weight_decay = 0.0;
  tcfg.grad_clip_norm = 1.0;
  AdamW opt(tcfg, params);
  opt.step(params, grads);
  const double expected = double(float(1.0 - 0.1 * (1.0 / (1.0 + tcfg.eps))));
  CHECK(params.adapter_w(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

namespace {

Corpus train_corpus(uint64_t seed, int videos = 60) {
  GenConfig cfg;
  cfg.agents = cfg.actions = cfg.objects = cfg.modifiers = 8;
  cfg.videos = videos;
  cfg.train_fraction = 0.7;
  cfg.val_fraction = 0.15;
  cfg.test_fraction = 0.15;
  Rng rng(seed);
  return generate_corpus(cfg, rng);
}

TrainConfig fast_train_config() {
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batch_size = 16;
  tcfg.seed = 9;
  return tcfg;
}

ModelConfig small_model() {
  ModelConfig mcfg;
  mcfg.d_model = 32;
  mcfg.n_layers = 1;
  mcfg.n_heads = 2;
  mcfg.max_seq_len = 96;
  return mcfg;
}

}  // namespace

TEST_CASE("zero epochs returns initialized params and an empty epoch list") {
  const auto corpus = train_corpus(71);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Entailment;
  TrainConfig tcfg = fast_train_config();
  tcfg.epochs = 0;
  const auto result = train(corpus, objective, tcfg, small_model(), {});
  CHECK(result.report.epochs.empty());
  CHECK(result.report.selected_epoch == -1);
  ModelConfig expected = small_model();
  expected.text_vocab_size = corpus.lexicon.text_vocab_size();
  expected.visual_vocab_size = corpus.lexicon.visual_vocab_size();
  expected.seed = result.params.config.seed;
  const auto fresh = ModelParams::init(expected);
  const auto a = result.params.registry();
  const auto b = fresh.registry();
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < a[i].size(); ++j) CHECK(a[i].data[j] == b[i].data[j]);
  }
}

TEST_CASE("training runs are deterministic for a fixed seed") {
  const auto corpus = train_corpus(72);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Entailment;
  const TrainConfig tcfg = fast_train_config();
  const auto r1 = train(corpus, objective, tcfg, small_model(), {});
  const auto r2 = train(corpus, objective, tcfg, small_model(), {});
  REQUIRE(r1.report.epochs.size() == r2.report.epochs.size());
  for (size_t i = 0; i < r1.report.epochs.size(); ++i) {
    CHECK(r1.report.epochs[i].train_loss == r2.report.epochs[i].train_loss);
    CHECK(r1.report.epochs[i].val_loss == r2.report.epochs[i].val_loss);
  }
  CHECK(r1.report.initial_train_loss == r2.report.initial_train_loss);
}

TEST_CASE("a short run improves on the initial loss for every objective") {
  const auto corpus = train_corpus(73);
  for (const auto task :
       {ObjectiveConfig::Task::Pretrain, ObjectiveConfig::Task::Entailment,
        ObjectiveConfig::Task::Haca, ObjectiveConfig::Task::HacaPlusMask,
        ObjectiveConfig::Task::EntailPlusMask}) {
    ObjectiveConfig objective;
    objective.task = task;
    TrainConfig tcfg = fast_train_config();
    tcfg.epochs = 3;
    tcfg.selection_metric = "val_loss";
    const auto result = train(corpus, objective, tcfg, small_model(), {});
    REQUIRE(!result.report.epochs.empty());
    CHECK(result.report.epochs.back().train_loss < result.report.initial_train_loss);
    CHECK(!result.report.diverged);
  }
}

TEST_CASE("training never modifies the frozen visual embedding") {
  const auto corpus = train_corpus(74);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Haca;
  const TrainConfig tcfg = fast_train_config();
  const auto result = train(corpus, objective, tcfg, small_model(), {});
  ModelConfig expected = result.params.config;
  const auto fresh = ModelParams::init(expected);
  for (Eigen::Index r = 0; r < fresh.visual_embedding.rows(); ++r) {
    for (Eigen::Index c = 0; c < fresh.visual_embedding.cols(); ++c) {
      CHECK(result.params.visual_embedding(r, c) == fresh.visual_embedding(r, c));
    }
  }
}

TEST_CASE("divergence aborts with the last good checkpoint") {
  const auto corpus = train_corpus(75, 40);
  ObjectiveConfig objective;
  objective.task = ObjectiveConfig::Task::Entailment;
  TrainConfig tcfg = fast_train_config();
  tcfg.epochs = 6;
  tcfg.learning_rate = 1e18;  // guaranteed blow-up
  tcfg.grad_clip_norm = 0.0;
  const auto result = train(corpus, objective, tcfg, small_model(), {});
  CHECK(result.report.diverged);
  CHECK(result.report.epochs.size() < 6);
  for (const auto& ref : result.params.registry()) {
    for (size_t j = 0; j < ref.size(); ++j) CHECK(std::isfinite(ref.data[j]));
  }
}
