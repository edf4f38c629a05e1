#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lexicon.hpp"

namespace haca {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 96;
  int text_vocab_size = 0;
  int visual_vocab_size = 0;
  uint64_t seed = 1;

  bool operator==(const ModelConfig&) const = default;
  void validate() const;
};

// View into one named parameter tensor. Registry order is the checkpoint and
// optimizer-state layout; it must stay stable.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool trainable = true;

  size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
};

struct LayerParams {
  Vec ln1_gamma, ln1_beta;
  Mat w_qkv;  // [d, 3d]
  Vec b_qkv;
  Mat w_attn_out;  // [d, d]
  Vec b_attn_out;
  Vec ln2_gamma, ln2_beta;
  Mat w_mlp_in;  // [d, 4d]
  Vec b_mlp_in;
  Mat w_mlp_out;  // [4d, d]
  Vec b_mlp_out;
};

struct ModelParams {
  ModelConfig config;
  Mat visual_embedding;  // [visual_vocab, d], frozen
  Mat adapter_w;         // [d, d]
  Vec adapter_b;
  Mat text_embedding;  // [text_vocab, d]
  Mat pos_embedding;   // [max_seq_len, d]
  Mat seg_embedding;   // [3, d] for the V / Q / A segments
  std::vector<LayerParams> layers;
  Vec lnf_gamma, lnf_beta;
  Mat w_out;  // [d, text_vocab]
  Vec b_out;

  // Seeded initialization. Every tensor is snapped to the fp32 grid so the
  // 32-bit checkpoint format round-trips losslessly.
  static ModelParams init(const ModelConfig& config);
  static ModelParams zeros_like(const ModelParams& other);

  std::vector<TensorRef> registry();
  std::vector<TensorRef> registry() const;  // refs are non-owning either way

  void set_zero();
  void snap_to_f32();
};

// One (V, Q, A) sample; the model consumes the concatenated stream.
struct EncodedExample {
  std::vector<TokenId> visual;
  std::vector<TokenId> question;
  std::vector<TokenId> answer;

  size_t total_len() const { return visual.size() + question.size() + answer.size(); }
};

struct LayerCache {
  Mat input;  // [T, d] residual-stream input to this layer
  Mat ln1_xhat;
  Vec ln1_rstd;
  Mat ln1_out;
  Mat qkv;                     // [T, 3d]
  std::vector<Mat> att_probs;  // per head [T, T], causal rows
  Mat ctx;                     // [T, d] heads re-concatenated
  Mat res1;                    // [T, d] after the attention residual
  Mat ln2_xhat;
  Vec ln2_rstd;
  Mat ln2_out;
  Mat mlp_pre;  // [T, 4d]
  Mat mlp_act;  // [T, 4d]
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Mat final_in;  // [T, d] input to the final layer norm
  Mat lnf_xhat;
  Vec lnf_rstd;
  Mat lnf_out;
  Mat logits;  // [T, text_vocab]
};

// Full causal forward over [visual | question | answer]. Logits at position t
// depend only on positions <= t.
void forward(const ModelParams& params, const EncodedExample& example, ForwardCache& cache);
Mat forward_logits(const ModelParams& params, const EncodedExample& example);

// Next-token distribution after [visual | question | answer-so-far].
Vec next_token_distribution(const ModelParams& params, const EncodedExample& example);

// Sum over answer positions of log softmax probability of the true next
// token; <= 0. Positions whose target is PAD are skipped, so the value is
// invariant to trailing padding.
double log_likelihood(const ModelParams& params, const EncodedExample& example);

// P(YES) / (P(YES) + P(NO)) from the first-answer-token distribution.
double yes_probability(const ModelParams& params, std::span<const TokenId> visual,
                       std::span<const TokenId> question);

// Greedy decoding, ties broken toward the lowest token id; stops at EOS (the
// EOS token is not included in the result) or after max_new tokens.
std::vector<TokenId> generate(const ModelParams& params, std::span<const TokenId> visual,
                              std::span<const TokenId> question, int max_new);

struct CheckpointMeta {
  std::string objective;
  uint64_t seed = 0;
  std::string dataset_hash;  // identity of the data the model was trained on
  std::string config_hash;      // hash of the full experiment config
};

struct Checkpoint {
  ModelParams params;
  CheckpointMeta meta;
};

// Header (format version, config, registry) + flat little-endian f32 arrays
// in registry order.
void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace haca
