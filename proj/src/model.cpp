#include "model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "error.hpp"
#include "json.hpp"
#include "model_math.hpp"
#include "rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace haca {

using nlohmann::json;

namespace {

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'H', 'A', 'C', 'A'};

enum Segment : int { kSegVisual = 0, kSegQuestion = 1, kSegAnswer = 2 };

struct SeqView {
  std::vector<TokenId> ids;
  std::vector<int> seg;
};

SeqView build_seq(const ModelConfig& config, const EncodedExample& ex) {
  const size_t t = ex.total_len();
  if (t == 0) throw Error(ErrorCode::Data, "empty sequence");
  if (t > static_cast<size_t>(config.max_seq_len)) {
    throw Error(ErrorCode::Data, "sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                                     std::to_string(config.max_seq_len));
  }
  SeqView sv;
  sv.ids.reserve(t);
  sv.seg.reserve(t);
  for (TokenId id : ex.visual) {
    if (id < 0 || id >= config.visual_vocab_size) {
      throw Error(ErrorCode::Data, "visual token out of range: " + std::to_string(id));
    }
    sv.ids.push_back(id);
    sv.seg.push_back(kSegVisual);
  }
  for (TokenId id : ex.question) {
    if (id < 0 || id >= config.text_vocab_size) {
      throw Error(ErrorCode::Data, "question token out of range: " + std::to_string(id));
    }
    sv.ids.push_back(id);
    sv.seg.push_back(kSegQuestion);
  }
  for (TokenId id : ex.answer) {
    if (id < 0 || id >= config.text_vocab_size) {
      throw Error(ErrorCode::Data, "answer token out of range: " + std::to_string(id));
    }
    sv.ids.push_back(id);
    sv.seg.push_back(kSegAnswer);
  }
  return sv;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 1) {
    throw Error(ErrorCode::Usage, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorCode::Usage, "d_model must be divisible by n_heads");
  }
  if (text_vocab_size < 1 || visual_vocab_size < 1) {
    throw Error(ErrorCode::Usage, "vocabulary sizes must be set before building the model");
  }
}

namespace {

ModelParams allocate_params(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  ModelParams p;
  p.config = config;
  p.visual_embedding = Mat::Zero(config.visual_vocab_size, d);
  p.adapter_w = Mat::Zero(d, d);
  p.adapter_b = Vec::Zero(d);
  p.text_embedding = Mat::Zero(config.text_vocab_size, d);
  p.pos_embedding = Mat::Zero(config.max_seq_len, d);
  p.seg_embedding = Mat::Zero(3, d);
  p.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& layer : p.layers) {
    layer.ln1_gamma = Vec::Zero(d);
    layer.ln1_beta = Vec::Zero(d);
    layer.w_qkv = Mat::Zero(d, 3 * d);
    layer.b_qkv = Vec::Zero(3 * d);
    layer.w_attn_out = Mat::Zero(d, d);
    layer.b_attn_out = Vec::Zero(d);
    layer.ln2_gamma = Vec::Zero(d);
    layer.ln2_beta = Vec::Zero(d);
    layer.w_mlp_in = Mat::Zero(d, 4 * d);
    layer.b_mlp_in = Vec::Zero(4 * d);
    layer.w_mlp_out = Mat::Zero(4 * d, d);
    layer.b_mlp_out = Vec::Zero(d);
  }
  p.lnf_gamma = Vec::Zero(d);
  p.lnf_beta = Vec::Zero(d);
  p.w_out = Mat::Zero(d, config.text_vocab_size);
  p.b_out = Vec::Zero(config.text_vocab_size);
  return p;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config) {
  ModelParams p = allocate_params(config);
  Rng rng(config.seed);
  for (auto& ref : p.registry()) {
    const bool is_gamma = ref.name.find("gamma") != std::string::npos;
    const bool is_bias = ref.name.find("_b") != std::string::npos ||
                         ref.name.find("beta") != std::string::npos;
    double* data = ref.data;
    if (is_gamma) {
      std::fill(data, data + ref.size(), 1.0);
    } else if (is_bias) {
      std::fill(data, data + ref.size(), 0.0);
    } else {
      const double scale = ref.name == "visual_embedding" ? 1.0 : 0.02;
      for (size_t i = 0; i < ref.size(); ++i) data[i] = scale * rng.gaussian();
    }
  }
  p.snap_to_f32();
  return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  return allocate_params(other.config);
}

std::vector<TensorRef> ModelParams::registry() {
  std::vector<TensorRef> refs;
  auto add_mat = [&](const std::string& name, Mat& m, bool trainable) {
    refs.push_back({name, m.data(), m.rows(), m.cols(), trainable});
  };
  auto add_vec = [&](const std::string& name, Vec& v, bool trainable) {
    refs.push_back({name, v.data(), v.size(), 1, trainable});
  };
  add_mat("visual_embedding", visual_embedding, /*trainable=*/false);
  add_mat("adapter_w", adapter_w, true);
  add_vec("adapter_b", adapter_b, true);
  add_mat("text_embedding", text_embedding, true);
  add_mat("pos_embedding", pos_embedding, true);
  add_mat("seg_embedding", seg_embedding, true);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    auto& layer = layers[l];
    add_vec(prefix + "ln1_gamma", layer.ln1_gamma, true);
    add_vec(prefix + "ln1_beta", layer.ln1_beta, true);
    add_mat(prefix + "w_qkv", layer.w_qkv, true);
    add_vec(prefix + "b_qkv", layer.b_qkv, true);
    add_mat(prefix + "w_attn_out", layer.w_attn_out, true);
    add_vec(prefix + "b_attn_out", layer.b_attn_out, true);
    add_vec(prefix + "ln2_gamma", layer.ln2_gamma, true);
    add_vec(prefix + "ln2_beta", layer.ln2_beta, true);
    add_mat(prefix + "w_mlp_in", layer.w_mlp_in, true);
    add_vec(prefix + "b_mlp_in", layer.b_mlp_in, true);
    add_mat(prefix + "w_mlp_out", layer.w_mlp_out, true);
    add_vec(prefix + "b_mlp_out", layer.b_mlp_out, true);
  }
  add_vec("lnf_gamma", lnf_gamma, true);
  add_vec("lnf_beta", lnf_beta, true);
  add_mat("w_out", w_out, true);
  add_vec("b_out", b_out, true);
  return refs;
}

std::vector<TensorRef> ModelParams::registry() const {
  return const_cast<ModelParams*>(this)->registry();
}

void ModelParams::set_zero() {
  for (auto& ref : registry()) std::fill(ref.data, ref.data + ref.size(), 0.0);
}

void ModelParams::snap_to_f32() {
  for (auto& ref : registry()) {
    for (size_t i = 0; i < ref.size(); ++i) {
      ref.data[i] = static_cast<double>(static_cast<float>(ref.data[i]));
    }
  }
}

void forward(const ModelParams& params, const EncodedExample& example, ForwardCache& cache) {
  const ModelConfig& cfg = params.config;
  const SeqView sv = build_seq(cfg, example);
  const auto t_len = static_cast<Eigen::Index>(sv.ids.size());
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hs = d / heads;
  const double inv_sqrt_hs = 1.0 / std::sqrt(static_cast<double>(hs));

  Mat x(t_len, d);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    if (sv.seg[static_cast<size_t>(t)] == kSegVisual) {
      x.row(t) = params.visual_embedding.row(sv.ids[static_cast<size_t>(t)]) * params.adapter_w +
                 params.adapter_b.transpose();
    } else {
      x.row(t) = params.text_embedding.row(sv.ids[static_cast<size_t>(t)]);
    }
    x.row(t) += params.pos_embedding.row(t) +
                params.seg_embedding.row(sv.seg[static_cast<size_t>(t)]);
  }

  cache.layers.resize(params.layers.size());
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& lp = params.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.input = x;

    detail::layer_norm_forward(lc.input, lp.ln1_gamma, lp.ln1_beta, lc.ln1_out, lc.ln1_xhat,
                               lc.ln1_rstd);

    lc.qkv.noalias() = lc.ln1_out * lp.w_qkv;
    lc.qkv.rowwise() += lp.b_qkv.transpose();

    lc.ctx.resize(t_len, d);
    lc.att_probs.assign(static_cast<size_t>(heads), Mat());
    for (int h = 0; h < heads; ++h) {
      const auto q = lc.qkv.block(0, h * hs, t_len, hs);
      const auto k = lc.qkv.block(0, d + h * hs, t_len, hs);
      const auto v = lc.qkv.block(0, 2 * d + h * hs, t_len, hs);

      Mat scores = q * k.transpose() * inv_sqrt_hs;
      Mat& probs = lc.att_probs[static_cast<size_t>(h)];
      probs = Mat::Zero(t_len, t_len);
      for (Eigen::Index i = 0; i < t_len; ++i) {
        const auto row = scores.row(i).head(i + 1);
        const double m = row.maxCoeff();
        const Eigen::RowVectorXd e = (row.array() - m).exp().matrix();
        probs.row(i).head(i + 1) = e / e.sum();
      }
      lc.ctx.block(0, h * hs, t_len, hs).noalias() = probs * v;
    }

    Mat att_out = lc.ctx * lp.w_attn_out;
    att_out.rowwise() += lp.b_attn_out.transpose();
    lc.res1 = lc.input + att_out;

    detail::layer_norm_forward(lc.res1, lp.ln2_gamma, lp.ln2_beta, lc.ln2_out, lc.ln2_xhat,
                               lc.ln2_rstd);

    lc.mlp_pre.noalias() = lc.ln2_out * lp.w_mlp_in;
    lc.mlp_pre.rowwise() += lp.b_mlp_in.transpose();
    lc.mlp_act = lc.mlp_pre.unaryExpr([](double v) { return detail::gelu_value(v); });

    Mat mlp_out = lc.mlp_act * lp.w_mlp_out;
    mlp_out.rowwise() += lp.b_mlp_out.transpose();
    x = lc.res1 + mlp_out;
  }

  cache.final_in = x;
  detail::layer_norm_forward(cache.final_in, params.lnf_gamma, params.lnf_beta, cache.lnf_out,
                             cache.lnf_xhat, cache.lnf_rstd);
  cache.logits.noalias() = cache.lnf_out * params.w_out;
  cache.logits.rowwise() += params.b_out.transpose();
  if (!cache.logits.allFinite()) {
    throw Error(ErrorCode::Training, "non-finite logits in forward pass");
  }
}

Mat forward_logits(const ModelParams& params, const EncodedExample& example) {
  ForwardCache cache;
  forward(params, example, cache);
  return std::move(cache.logits);
}

Vec next_token_distribution(const ModelParams& params, const EncodedExample& example) {
  const Mat logits = forward_logits(params, example);
  const auto row = logits.row(logits.rows() - 1);
  const double m = row.maxCoeff();
  Vec p = (row.array() - m).exp().matrix().transpose();
  p /= p.sum();
  return p;
}

double log_likelihood(const ModelParams& params, const EncodedExample& example) {
  if (example.answer.empty()) {
    throw Error(ErrorCode::Data, "log_likelihood requires a non-empty answer");
  }
  const Mat logits = forward_logits(params, example);
  const size_t prefix = example.visual.size() + example.question.size();
  if (prefix == 0) {
    throw Error(ErrorCode::Data, "log_likelihood requires a non-empty (V, Q) prefix");
  }
  double ll = 0.0;
  for (size_t k = 0; k < example.answer.size(); ++k) {
    const TokenId target = example.answer[k];
    if (target == special::kPad) continue;  // padding never contributes
    const auto row = logits.row(static_cast<Eigen::Index>(prefix + k - 1));
    ll += row(target) - detail::log_sum_exp(row);
  }
  return ll;
}

double yes_probability(const ModelParams& params, std::span<const TokenId> visual,
                       std::span<const TokenId> question) {
  EncodedExample ex;
  ex.visual.assign(visual.begin(), visual.end());
  ex.question.assign(question.begin(), question.end());
  const Vec p = next_token_distribution(params, ex);
  const double yes = p(special::kYes);
  const double no = p(special::kNo);
  return yes / (yes + no);
}

std::vector<TokenId> generate(const ModelParams& params, std::span<const TokenId> visual,
                              std::span<const TokenId> question, int max_new) {
  if (max_new < 1) throw Error(ErrorCode::Usage, "max_new must be >= 1");
  EncodedExample ex;
  ex.visual.assign(visual.begin(), visual.end());
  ex.question.assign(question.begin(), question.end());

  std::vector<TokenId> out;
  for (int step = 0; step < max_new; ++step) {
    if (ex.total_len() >= static_cast<size_t>(params.config.max_seq_len)) break;
    const Mat logits = forward_logits(params, ex);
    const auto row = logits.row(logits.rows() - 1);
    TokenId best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j) {
      if (row(j) > row(best)) best = static_cast<TokenId>(j);
    }
    if (best == special::kEos) break;
    out.push_back(best);
    ex.answer.push_back(best);
  }
  return out;
}

void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta, const std::string& path) {
  json registry_json = json::array();
  const auto refs = params.registry();
  for (const auto& ref : refs) {
    registry_json.push_back({{"name", ref.name},
                             {"rows", ref.rows},
                             {"cols", ref.cols},
                             {"trainable", ref.trainable}});
  }
  const json header{{"format_version", kCheckpointVersion},
                    {"model_config",
                     {{"d_model", params.config.d_model},
                      {"n_layers", params.config.n_layers},
                      {"n_heads", params.config.n_heads},
                      {"max_seq_len", params.config.max_seq_len},
                      {"text_vocab_size", params.config.text_vocab_size},
                      {"visual_vocab_size", params.config.visual_vocab_size},
                      {"seed", params.config.seed}}},
                    {"objective", meta.objective},
                    {"seed", meta.seed},
                    {"dataset_hash", meta.dataset_hash},
                    {"config_hash", meta.config_hash},
                    {"registry", registry_json}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Data, "cannot open for writing: " + path);
  out.write(kCheckpointMagic, 4);
  const uint32_t version = kCheckpointVersion;
  const auto header_len = static_cast<uint32_t>(header_str.size());
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  std::vector<float> buf;
  for (const auto& ref : refs) {
    buf.resize(ref.size());
    for (size_t i = 0; i < ref.size(); ++i) buf[i] = static_cast<float>(ref.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::Data, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Data, "cannot open checkpoint: " + path);

  char magic[4];
  uint32_t version = 0;
  uint32_t header_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw Error(ErrorCode::Data, "not a checkpoint file: " + path);
  }
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::Data, "unsupported checkpoint format version " + std::to_string(version));
  }
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), header_len);
  if (!in) throw Error(ErrorCode::Data, "truncated checkpoint header: " + path);

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Data, std::string("bad checkpoint header: ") + e.what());
  }

  ModelConfig config;
  const auto& mc = header.at("model_config");
  config.d_model = mc.at("d_model").get<int>();
  config.n_layers = mc.at("n_layers").get<int>();
  config.n_heads = mc.at("n_heads").get<int>();
  config.max_seq_len = mc.at("max_seq_len").get<int>();
  config.text_vocab_size = mc.at("text_vocab_size").get<int>();
  config.visual_vocab_size = mc.at("visual_vocab_size").get<int>();
  config.seed = mc.at("seed").get<uint64_t>();

  Checkpoint ckpt;
  ckpt.params = allocate_params(config);
  ckpt.meta.objective = header.at("objective").get<std::string>();
  ckpt.meta.seed = header.at("seed").get<uint64_t>();
  ckpt.meta.dataset_hash = header.at("dataset_hash").get<std::string>();
  ckpt.meta.config_hash = header.at("config_hash").get<std::string>();

  const auto refs = ckpt.params.registry();
  const auto& registry_json = header.at("registry");
  if (registry_json.size() != refs.size()) {
    throw Error(ErrorCode::Data, "checkpoint registry size mismatch: file has " +
                                     std::to_string(registry_json.size()) + ", model has " +
                                     std::to_string(refs.size()));
  }
  for (size_t i = 0; i < refs.size(); ++i) {
    const auto& j = registry_json[i];
    if (j.at("name").get<std::string>() != refs[i].name ||
        j.at("rows").get<Eigen::Index>() != refs[i].rows ||
        j.at("cols").get<Eigen::Index>() != refs[i].cols ||
        j.at("trainable").get<bool>() != refs[i].trainable) {
      throw Error(ErrorCode::Data, "checkpoint registry mismatch at tensor '" + refs[i].name + "'");
    }
  }

  std::vector<float> buf;
  for (const auto& ref : refs) {
    buf.resize(ref.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw Error(ErrorCode::Data, "truncated checkpoint payload: " + path);
    for (size_t i = 0; i < ref.size(); ++i) ref.data[i] = static_cast<double>(buf[i]);
  }
  in.peek();
  if (!in.eof()) throw Error(ErrorCode::Data, "trailing bytes after checkpoint payload: " + path);
  return ckpt;
}

}  // namespace haca
