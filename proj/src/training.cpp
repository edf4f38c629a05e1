#include "training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "error.hpp"
#include "evaluation.hpp"
#include "model_math.hpp"

namespace haca {

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::Usage, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::Usage, "batch_size must be >= 1");
  if (learning_rate <= 0.0) throw Error(ErrorCode::Usage, "learning_rate must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw Error(ErrorCode::Usage, "optimizer moments must be in [0, 1)");
  }
  if (eps <= 0.0) throw Error(ErrorCode::Usage, "optimizer eps must be > 0");
  if (weight_decay < 0.0) throw Error(ErrorCode::Usage, "weight_decay must be >= 0");
  if (selection_metric != "val_binding_accuracy" && selection_metric != "val_loss") {
    throw Error(ErrorCode::Usage, "unknown selection metric: " + selection_metric);
  }
}

EncodedExample encode_example(const TrainingExample& example) {
  if (example.answer.empty()) {
    throw Error(ErrorCode::Data, "training example with empty answer");
  }
  EncodedExample ex;
  ex.visual = example.feature_tokens;
  ex.question = example.question;
  ex.answer = example.answer;
  return ex;
}

namespace {

// Backward through one example given its forward cache; gradients are
// accumulated into `g` scaled by `weight`. Returns the example's summed
// negative log-likelihood over answer tokens.
double backward_example(const ModelParams& params, const EncodedExample& ex,
                        const ForwardCache& cache, double weight, ModelParams& g) {
  const ModelConfig& cfg = params.config;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hs = d / heads;
  const double inv_sqrt_hs = 1.0 / std::sqrt(static_cast<double>(hs));
  const auto t_len = static_cast<Eigen::Index>(ex.total_len());
  const size_t prefix = ex.visual.size() + ex.question.size();
  if (prefix == 0) throw Error(ErrorCode::Data, "example with empty (V, Q) prefix");

  // Softmax cross-entropy at positions whose target is an answer token.
  double loss = 0.0;
  Mat dlogits = Mat::Zero(t_len, cfg.text_vocab_size);
  for (size_t k = 0; k < ex.answer.size(); ++k) {
    const TokenId target = ex.answer[k];
    if (target == special::kPad) continue;
    const auto pos = static_cast<Eigen::Index>(prefix + k - 1);
    const auto row = cache.logits.row(pos);
    const double lse = detail::log_sum_exp(row);
    loss -= row(target) - lse;
    dlogits.row(pos) = (row.array() - lse).exp().matrix() * weight;
    dlogits(pos, target) -= weight;
  }

  // Output head.
  g.w_out.noalias() += cache.lnf_out.transpose() * dlogits;
  g.b_out += dlogits.colwise().sum().transpose();
  Mat d_lnf_out = dlogits * params.w_out.transpose();
  Mat dx = detail::layer_norm_backward(d_lnf_out, cache.lnf_xhat, cache.lnf_rstd, params.lnf_gamma,
                                       g.lnf_gamma, g.lnf_beta);

  for (int l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
    const LayerParams& lp = params.layers[static_cast<size_t>(l)];
    const LayerCache& lc = cache.layers[static_cast<size_t>(l)];
    LayerParams& gl = g.layers[static_cast<size_t>(l)];

    // out = res1 + mlp(ln2(res1))
    const Mat& d_mlp_out = dx;
    gl.w_mlp_out.noalias() += lc.mlp_act.transpose() * d_mlp_out;
    gl.b_mlp_out += d_mlp_out.colwise().sum().transpose();
    Mat d_mlp_act = d_mlp_out * lp.w_mlp_out.transpose();
    Mat d_mlp_pre =
        d_mlp_act.cwiseProduct(lc.mlp_pre.unaryExpr([](double v) { return detail::gelu_derivative(v); }));
    gl.w_mlp_in.noalias() += lc.ln2_out.transpose() * d_mlp_pre;
    gl.b_mlp_in += d_mlp_pre.colwise().sum().transpose();
    Mat d_ln2_out = d_mlp_pre * lp.w_mlp_in.transpose();
    Mat d_res1 = detail::layer_norm_backward(d_ln2_out, lc.ln2_xhat, lc.ln2_rstd, lp.ln2_gamma,
                                             gl.ln2_gamma, gl.ln2_beta);
    d_res1 += dx;

    // res1 = input + attn(ln1(input))
    const Mat& d_att_out = d_res1;
    gl.w_attn_out.noalias() += lc.ctx.transpose() * d_att_out;
    gl.b_attn_out += d_att_out.colwise().sum().transpose();
    Mat d_ctx = d_att_out * lp.w_attn_out.transpose();

    Mat d_qkv = Mat::Zero(t_len, 3 * d);
    for (int h = 0; h < heads; ++h) {
      const auto q = lc.qkv.block(0, h * hs, t_len, hs);
      const auto k = lc.qkv.block(0, d + h * hs, t_len, hs);
      const auto v = lc.qkv.block(0, 2 * d + h * hs, t_len, hs);
      const Mat& probs = lc.att_probs[static_cast<size_t>(h)];
      const auto d_ctx_h = d_ctx.block(0, h * hs, t_len, hs);

      Mat d_probs = d_ctx_h * v.transpose();
      d_qkv.block(0, 2 * d + h * hs, t_len, hs).noalias() = probs.transpose() * d_ctx_h;

      // Softmax backward per causal row.
      Mat d_scores = Mat::Zero(t_len, t_len);
      for (Eigen::Index i = 0; i < t_len; ++i) {
        const auto p_row = probs.row(i).head(i + 1);
        const auto dp_row = d_probs.row(i).head(i + 1);
        const double dot = (p_row.array() * dp_row.array()).sum();
        d_scores.row(i).head(i + 1) =
            ((dp_row.array() - dot) * p_row.array()).matrix() * inv_sqrt_hs;
      }
      d_qkv.block(0, h * hs, t_len, hs).noalias() = d_scores * k;
      d_qkv.block(0, d + h * hs, t_len, hs).noalias() = d_scores.transpose() * q;
    }

    gl.w_qkv.noalias() += lc.ln1_out.transpose() * d_qkv;
    gl.b_qkv += d_qkv.colwise().sum().transpose();
    Mat d_ln1_out = d_qkv * lp.w_qkv.transpose();
    Mat d_input = detail::layer_norm_backward(d_ln1_out, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_gamma,
                                              gl.ln1_gamma, gl.ln1_beta);
    d_input += d_res1;
    dx = std::move(d_input);
  }

  // Embeddings; the visual embedding is frozen, only the adapter learns.
  Eigen::Index t = 0;
  for (TokenId id : ex.visual) {
    g.adapter_w.noalias() += params.visual_embedding.row(id).transpose() * dx.row(t);
    g.adapter_b += dx.row(t).transpose();
    g.pos_embedding.row(t) += dx.row(t);
    g.seg_embedding.row(0) += dx.row(t);
    ++t;
  }
  for (TokenId id : ex.question) {
    g.text_embedding.row(id) += dx.row(t);
    g.pos_embedding.row(t) += dx.row(t);
    g.seg_embedding.row(1) += dx.row(t);
    ++t;
  }
  for (TokenId id : ex.answer) {
    g.text_embedding.row(id) += dx.row(t);
    g.pos_embedding.row(t) += dx.row(t);
    g.seg_embedding.row(2) += dx.row(t);
    ++t;
  }
  return loss;
}

uint64_t batch_fingerprint(std::span<const EncodedExample> batch) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& ex : batch) {
    h = fnv1a64(ex.visual.data(), ex.visual.size() * sizeof(TokenId), h);
    h = fnv1a64(ex.question.data(), ex.question.size() * sizeof(TokenId), h);
    h = fnv1a64(ex.answer.data(), ex.answer.size() * sizeof(TokenId), h);
  }
  return h;
}

}  // namespace

BatchLoss loss_batch(const ModelParams& params, std::span<const EncodedExample> batch) {
  if (batch.empty()) throw Error(ErrorCode::Usage, "empty batch");
  BatchLoss result;
  result.grads = ModelParams::zeros_like(params);
  const double weight = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  ForwardCache cache;
  for (const auto& ex : batch) {
    forward(params, ex, cache);
    total += backward_example(params, ex, cache, weight, result.grads);
  }
  result.loss = total * weight;
  if (!std::isfinite(result.loss)) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(batch_fingerprint(batch)));
    throw Error(ErrorCode::Training, std::string("non-finite loss on batch ") + buf);
  }
  return result;
}

double loss_batch_value(const ModelParams& params, std::span<const EncodedExample> batch) {
  if (batch.empty()) throw Error(ErrorCode::Usage, "empty batch");
  double total = 0.0;
  for (const auto& ex : batch) total += -log_likelihood(params, ex);
  return total / static_cast<double>(batch.size());
}

AdamW::AdamW(const TrainConfig& config, const ModelParams& shape)
    : config_(config), m_(ModelParams::zeros_like(shape)), v_(ModelParams::zeros_like(shape)) {
  config_.validate();
}

void AdamW::step(ModelParams& params, const ModelParams& grads) {
  auto p_refs = params.registry();
  const auto g_refs = grads.registry();
  auto m_refs = m_.registry();
  auto v_refs = v_.registry();
  if (p_refs.size() != g_refs.size()) {
    throw Error(ErrorCode::Usage, "gradient registry does not match parameters");
  }
  for (size_t i = 0; i < p_refs.size(); ++i) {
    if (p_refs[i].name != g_refs[i].name || p_refs[i].size() != g_refs[i].size() ||
        p_refs[i].size() != m_refs[i].size()) {
      throw Error(ErrorCode::Usage, "tensor shape mismatch at '" + p_refs[i].name + "'");
    }
  }

  ++step_count_;
  double norm_sq = 0.0;
  for (size_t i = 0; i < g_refs.size(); ++i) {
    if (!p_refs[i].trainable) continue;
    for (size_t j = 0; j < g_refs[i].size(); ++j) norm_sq += g_refs[i].data[j] * g_refs[i].data[j];
  }
  double scale = 1.0;
  if (config_.grad_clip_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > config_.grad_clip_norm) scale = config_.grad_clip_norm / norm;
  }

  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < p_refs.size(); ++i) {
    if (!p_refs[i].trainable) continue;
    double* p = p_refs[i].data;
    const double* gd = g_refs[i].data;
    double* m = m_refs[i].data;
    double* v = v_refs[i].data;
    for (size_t j = 0; j < p_refs[i].size(); ++j) {
      const double g = gd[j] * scale;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      double value = p[j] - config_.learning_rate *
                                (m_hat / (std::sqrt(v_hat) + config_.eps) +
                                 config_.weight_decay * p[j]);
      // Keep parameters on the fp32 grid so checkpoints round-trip losslessly.
      p[j] = static_cast<double>(static_cast<float>(value));
    }
  }
}

namespace {

double mean_loss_over(const ModelParams& params, std::span<const EncodedExample> examples) {
  double total = 0.0;
  for (const auto& ex : examples) total += -log_likelihood(params, ex);
  return total / static_cast<double>(examples.size());
}

}  // namespace

TrainResult train(const Corpus& corpus, const ObjectiveConfig& objective, const TrainConfig& tcfg,
                  const ModelConfig& mcfg, std::span<const BindingTest> val_tests,
                  const ProgressFn& progress) {
  const auto start_time = std::chrono::steady_clock::now();
  tcfg.validate();

  Rng rng(tcfg.seed);
  Rng data_rng = rng.child("data");
  Rng val_rng = rng.child("val-data");
  const auto train_set = build_training_set(corpus, Split::Train, objective, data_rng);
  const auto val_set = build_training_set(corpus, Split::Val, objective, val_rng);

  std::vector<EncodedExample> train_examples;
  train_examples.reserve(train_set.size());
  for (const auto& ex : train_set) train_examples.push_back(encode_example(ex));
  std::vector<EncodedExample> val_examples;
  val_examples.reserve(val_set.size());
  for (const auto& ex : val_set) val_examples.push_back(encode_example(ex));

  ModelConfig mc = mcfg;
  mc.text_vocab_size = corpus.lexicon.text_vocab_size();
  mc.visual_vocab_size = corpus.lexicon.visual_vocab_size();
  mc.seed = rng.child("init").seed();
  size_t longest = 0;
  for (const auto& ex : train_examples) longest = std::max(longest, ex.total_len());
  for (const auto& ex : val_examples) longest = std::max(longest, ex.total_len());
  if (longest > static_cast<size_t>(mc.max_seq_len)) {
    throw Error(ErrorCode::Data, "max_seq_len " + std::to_string(mc.max_seq_len) +
                                     " is shorter than the longest example (" +
                                     std::to_string(longest) + ")");
  }

  TrainResult result;
  result.params = ModelParams::init(mc);
  result.report.objective = std::string(objective_task_name(objective.task));
  result.report.seed = tcfg.seed;
  result.report.selection_metric = tcfg.selection_metric;
  result.report.initial_train_loss = mean_loss_over(result.params, train_examples);

  const VideoLookup videos(corpus);
  AdamW optimizer(tcfg, result.params);
  ModelParams params = result.params;  // result.params tracks the selected checkpoint

  double best_metric = -std::numeric_limits<double>::infinity();
  std::vector<size_t> order(train_examples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng shuffle_rng = rng.child("epochs");

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    Rng epoch_rng = shuffle_rng.child(static_cast<uint64_t>(epoch));
    epoch_rng.shuffle(order);

    double epoch_loss = 0.0;
    size_t seen = 0;
    bool diverged = false;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(tcfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(tcfg.batch_size));
      std::vector<EncodedExample> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) batch.push_back(train_examples[order[i]]);
      try {
        const BatchLoss bl = loss_batch(params, batch);
        optimizer.step(params, bl.grads);
        epoch_loss += bl.loss * static_cast<double>(batch.size());
        seen += batch.size();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Training) throw;
        diverged = true;
        break;
      }
    }
    if (diverged) {
      result.report.diverged = true;
      break;
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / static_cast<double>(seen);
    stats.val_loss = mean_loss_over(params, val_examples);
    stats.val_binding_accuracy =
        val_tests.empty() ? 0.0
                          : binding_accuracy(params, corpus.lexicon, val_tests, videos).macro_avg;
    result.report.epochs.push_back(stats);

    const double metric = tcfg.selection_metric == "val_loss" ? -stats.val_loss
                                                              : stats.val_binding_accuracy;
    if (metric > best_metric) {
      best_metric = metric;
      result.params = params;
      result.report.selected_epoch = epoch;
    }

    if (progress) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "epoch %d/%d  train_loss %.4f  val_loss %.4f  val_binding %.4f", epoch + 1,
                    tcfg.epochs, stats.train_loss, stats.val_loss, stats.val_binding_accuracy);
      progress(line);
    }
  }

  result.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return result;
}

}  // namespace haca
