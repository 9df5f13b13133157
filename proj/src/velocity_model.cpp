#include "fbbs/velocity_model.hpp"

#include <cmath>
#include <string>

#include "fbbs/errors.hpp"
#include "fbbs/rng.hpp"

namespace fbbs {

void ModelConfig::validate() const {
  if (embed_dim < 2 || n_heads < 1 || embed_dim % n_heads != 0)
    throw ConfigError("embed_dim must be divisible by n_heads");
  if ((embed_dim / n_heads) % 2 != 0) throw ConfigError("attention head width must be even for RoPE");
  if (embed_dim % 4 != 0) throw ConfigError("embed_dim must be a multiple of 4");
  if (n_blocks < 1) throw ConfigError("n_blocks must be at least 1");
  if (n_channels != 2) throw ConfigError("n_channels must be 2");
  if (seq_len < 2) throw ConfigError("seq_len must be at least 2");
  if (cond_dim < 2 || cond_dim % 2 != 0) throw ConfigError("cond_dim must be a positive even integer");
  if (!(ffn_multiplier > 0.0)) throw ConfigError("ffn_multiplier must be positive");
}

int ModelConfig::ffn_dim() const { return std::max(1, static_cast<int>(std::lround(ffn_multiplier * embed_dim))); }

double PromptNormalization::feature(double rsrp) const {
  return (10.0 * std::log10(rsrp + 1e-12) - mean_db) / std_db;
}

template <typename Scalar>
PromptBatch<Scalar> PromptBatch<Scalar>::select(std::span<const int> rows) const {
  PromptBatch out{ad::Matrix<Scalar>(rows.size(), features.cols()), ad::Matrix<Scalar>(rows.size(), mask.cols())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(i) = features.row(rows[i]);
    out.mask.row(i) = mask.row(rows[i]);
  }
  return out;
}

template <typename Scalar>
PromptBatch<Scalar> encode_prompts(std::span<const Prompt> prompts, const PromptNormalization& norm) {
  if (prompts.empty()) throw DimensionError("empty prompt batch");
  const int q_max = prompts.front().q_max();
  PromptBatch<Scalar> out{ad::Matrix<Scalar>::Zero(prompts.size(), q_max), ad::Matrix<Scalar>::Zero(prompts.size(), q_max)};
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    const Prompt& p = prompts[b];
    if (p.q_max() != q_max || p.mask.size() != q_max) throw DimensionError("prompts in a batch differ in length");
    if (p.q_active() == 0) throw EmptyMask("prompt has no active entries");
    for (int i = 0; i < q_max; ++i) {
      if (!p.mask[i]) continue;
      out.mask(b, i) = Scalar(1);
      out.features(b, i) = static_cast<Scalar>(norm.feature(p.values[i]));
    }
  }
  return out;
}

Eigen::RowVectorXd sinusoidal_embedding(double position, int dim, double max_period) {
  const int half = dim / 2;
  Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / half);
    e[i] = std::sin(position * freq);
    e[half + i] = std::cos(position * freq);
  }
  return e;
}

ModelLayout model_layout(const ModelConfig& config) {
  std::size_t next = 0;
  ModelLayout l{};
  l.input_w = next++;
  l.input_b = next++;
  l.time_w0 = next++;
  l.time_b0 = next++;
  l.time_w1 = next++;
  l.time_b1 = next++;
  l.cond_value_w = next++;
  l.cond_value_b = next++;
  l.cond_pos_w0 = next++;
  l.cond_pos_b0 = next++;
  l.cond_pos_w1 = next++;
  l.cond_pos_b1 = next++;
  l.cond_out_w0 = next++;
  l.cond_out_b0 = next++;
  l.cond_out_w1 = next++;
  l.cond_out_b1 = next++;
  for (int b = 0; b < config.n_blocks; ++b) {
    ModelLayout::Block blk{};
    blk.adaln_w = next++;
    blk.adaln_b = next++;
    blk.qkv_w = next++;
    blk.qkv_b = next++;
    blk.proj_w = next++;
    blk.proj_b = next++;
    blk.ffn_in_w = next++;
    blk.ffn_in_b = next++;
    blk.ffn_out_w = next++;
    blk.ffn_out_b = next++;
    l.blocks.push_back(blk);
  }
  l.final_adaln_w = next++;
  l.final_adaln_b = next++;
  l.head_w = next++;
  l.head_b = next++;
  return l;
}

template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  using Mat = ad::Matrix<Scalar>;
  Rng rng(seed, /*stream=*/0x1417);
  ParameterSet<Scalar> p;
  auto xavier = [&](int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Mat w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(rng.uniform(-a, a));
    return w;
  };
  auto add_linear = [&](const std::string& name, int fan_in, int fan_out, bool zero) {
    p.add(name + ".weight", zero ? Mat::Zero(fan_in, fan_out) : xavier(fan_in, fan_out));
    p.add(name + ".bias", Mat::Zero(1, fan_out));
  };
  const int d = config.embed_dim;
  const int dc = config.cond_dim;
  add_linear("input", config.n_channels, d, false);
  add_linear("time.mlp0", d, d, false);
  add_linear("time.mlp1", d, d, false);
  add_linear("cond.value", 1, dc, false);
  add_linear("cond.pos0", dc, dc, false);
  add_linear("cond.pos1", dc, dc, false);
  add_linear("cond.out0", dc, d, false);
  add_linear("cond.out1", d, d, false);
  for (int b = 0; b < config.n_blocks; ++b) {
    const std::string prefix = "blocks." + std::to_string(b);
    add_linear(prefix + ".adaln", d, 6 * d, true);
    add_linear(prefix + ".attn.qkv", d, 3 * d, false);
    add_linear(prefix + ".attn.proj", d, d, false);
    add_linear(prefix + ".ffn.in", d, config.ffn_dim(), false);
    add_linear(prefix + ".ffn.out", config.ffn_dim(), d, false);
  }
  add_linear("final.adaln", d, 2 * d, true);
  add_linear("head", d, config.n_channels, true);
  return p;
}

template <typename Scalar>
ad::Matrix<Scalar> latent_to_tokens(const Latent<Scalar>& x, int n_channels, int seq_len) {
  ad::Matrix<Scalar> tokens(x.rows() * seq_len, n_channels);
  for (Eigen::Index b = 0; b < x.rows(); ++b)
    for (int c = 0; c < n_channels; ++c)
      for (int n = 0; n < seq_len; ++n) tokens(b * seq_len + n, c) = x(b, c * seq_len + n);
  return tokens;
}

template <typename Scalar>
Latent<Scalar> tokens_to_latent(const ad::Matrix<Scalar>& tokens, int n_channels, int seq_len) {
  Latent<Scalar> x(tokens.rows() / seq_len, n_channels * seq_len);
  for (Eigen::Index b = 0; b < x.rows(); ++b)
    for (int c = 0; c < n_channels; ++c)
      for (int n = 0; n < seq_len; ++n) x(b, c * seq_len + n) = tokens(b * seq_len + n, c);
  return x;
}

template <typename Scalar>
VelocityModel<Scalar>::VelocityModel(ModelConfig config, ParameterSet<Scalar> params)
    : config_(config), layout_(model_layout(config)), params_(std::move(params)) {
  config_.validate();
  if (params_.size() != layout_.head_b + 1) throw ConfigError("parameter count does not match model config");
  const ParameterSet<Scalar> reference = init_parameters<Scalar>(config_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_.tensors[i].rows() != reference.tensors[i].rows() || params_.tensors[i].cols() != reference.tensors[i].cols())
      throw DimensionError("parameter " + reference.names[i] + " has the wrong shape");
  }
}

template <typename Scalar>
std::vector<ad::Var<Scalar>> VelocityModel<Scalar>::bind(ad::Tape<Scalar>& tape) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& t : params_.tensors) out.push_back(tape.variable_ref(t));
  return out;
}

template <typename Scalar>
ad::Var<Scalar> VelocityModel<Scalar>::time_embed(ad::Tape<Scalar>& tape, std::span<const Var> p, std::span<const double> r,
                                                  std::span<const double> t) const {
  if (r.size() != t.size()) throw DimensionError("time_embed: r and t lengths differ");
  const int d = config_.embed_dim;
  Mat sinus(r.size(), d);
  for (std::size_t b = 0; b < r.size(); ++b) {
    sinus.row(b).leftCols(d / 2) = sinusoidal_embedding(1000.0 * r[b], d / 2).template cast<Scalar>();
    sinus.row(b).rightCols(d / 2) = sinusoidal_embedding(1000.0 * t[b], d / 2).template cast<Scalar>();
  }
  Var x = tape.constant(std::move(sinus));
  x = ad::silu(ad::linear(x, p[layout_.time_w0], p[layout_.time_b0]));
  return ad::linear(x, p[layout_.time_w1], p[layout_.time_b1]);
}

template <typename Scalar>
ad::Var<Scalar> VelocityModel<Scalar>::cond_encode(ad::Tape<Scalar>& tape, std::span<const Var> p,
                                                   const PromptBatch<Scalar>& prompts) const {
  const Eigen::Index batch = prompts.size();
  const Eigen::Index q_max = prompts.features.cols();
  // One scalar feature per (sample, probing index) row.
  Mat feats(batch * q_max, 1);
  Mat mask(batch * q_max, 1);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index i = 0; i < q_max; ++i) {
      const bool active = prompts.mask(b, i) != Scalar(0);
      feats(b * q_max + i, 0) = active ? prompts.features(b, i) : Scalar(0);
      mask(b * q_max + i, 0) = active ? Scalar(1) : Scalar(0);
    }
  Mat index_embedding(batch * q_max, config_.cond_dim);
  for (Eigen::Index i = 0; i < q_max; ++i) {
    const auto e = sinusoidal_embedding(static_cast<double>(i), config_.cond_dim).template cast<Scalar>().eval();
    for (Eigen::Index b = 0; b < batch; ++b) index_embedding.row(b * q_max + i) = e;
  }
  Var v = ad::linear(tape.constant(std::move(feats)), p[layout_.cond_value_w], p[layout_.cond_value_b]);
  v = ad::add_constant(v, index_embedding);
  v = ad::silu(ad::linear(v, p[layout_.cond_pos_w0], p[layout_.cond_pos_b0]));
  v = ad::linear(v, p[layout_.cond_pos_w1], p[layout_.cond_pos_b1]);
  Var pooled = ad::masked_mean_pool(v, mask, q_max);
  pooled = ad::silu(ad::linear(pooled, p[layout_.cond_out_w0], p[layout_.cond_out_b0]));
  return ad::linear(pooled, p[layout_.cond_out_w1], p[layout_.cond_out_b1]);
}

template <typename Scalar>
ad::Var<Scalar> VelocityModel<Scalar>::block(ad::Tape<Scalar>& /*tape*/, std::span<const Var> p, std::size_t index, Var h,
                                             Var c) const {
  const auto& blk = layout_.blocks[index];
  const Eigen::Index d = config_.embed_dim;
  const Eigen::Index n = config_.seq_len;
  Var mod = ad::linear(c, p[blk.adaln_w], p[blk.adaln_b]);
  Var shift1 = ad::slice_cols(mod, 0, d), scale1 = ad::slice_cols(mod, d, d), gate1 = ad::slice_cols(mod, 2 * d, d);
  Var shift2 = ad::slice_cols(mod, 3 * d, d), scale2 = ad::slice_cols(mod, 4 * d, d), gate2 = ad::slice_cols(mod, 5 * d, d);

  Var a = ad::modulate(ad::layer_norm(h), shift1, scale1, n);
  a = ad::rope_attention(ad::linear(a, p[blk.qkv_w], p[blk.qkv_b]), n, config_.n_heads);
  a = ad::linear(a, p[blk.proj_w], p[blk.proj_b]);
  h = ad::gated_residual(h, gate1, a, n);

  Var f = ad::modulate(ad::layer_norm(h), shift2, scale2, n);
  f = ad::gelu(ad::linear(f, p[blk.ffn_in_w], p[blk.ffn_in_b]));
  f = ad::linear(f, p[blk.ffn_out_w], p[blk.ffn_out_b]);
  return ad::gated_residual(h, gate2, f, n);
}

template <typename Scalar>
ad::Var<Scalar> VelocityModel<Scalar>::forward(ad::Tape<Scalar>& tape, std::span<const Var> p, const Latent<Scalar>& x,
                                               std::span<const double> r, std::span<const double> t,
                                               const PromptBatch<Scalar>& prompts) const {
  const int n = config_.seq_len;
  const int ch = config_.n_channels;
  if (x.cols() != ch * n) throw DimensionError("latent width does not match (C, N_t)");
  if (static_cast<std::size_t>(x.rows()) != r.size() || r.size() != t.size() || prompts.size() != x.rows())
    throw DimensionError("batch sizes of latent, times, and prompts differ");
  if (p.size() != params_.size()) throw DimensionError("bound parameter count mismatch");

  Var h = ad::linear(tape.constant(latent_to_tokens<Scalar>(x, ch, n)), p[layout_.input_w], p[layout_.input_b]);
  // Fixed absolute position table; RoPE alone only sees offsets, and the
  // output has to land on specific angular bins.
  Mat positions(h.value().rows(), config_.embed_dim);
  for (int i = 0; i < n; ++i) {
    const auto e = sinusoidal_embedding(static_cast<double>(i), config_.embed_dim).template cast<Scalar>().eval();
    for (Eigen::Index b = 0; b < x.rows(); ++b) positions.row(b * n + i) = e;
  }
  h = ad::add_constant(h, positions);
  Var c = ad::silu(ad::add(time_embed(tape, p, r, t), cond_encode(tape, p, prompts)));
  for (std::size_t b = 0; b < layout_.blocks.size(); ++b) h = block(tape, p, b, h, c);

  const Eigen::Index d = config_.embed_dim;
  Var mod = ad::linear(c, p[layout_.final_adaln_w], p[layout_.final_adaln_b]);
  h = ad::modulate(ad::layer_norm(h), ad::slice_cols(mod, 0, d), ad::slice_cols(mod, d, d), n);
  Var tokens = ad::linear(h, p[layout_.head_w], p[layout_.head_b]);

  Mat out = tokens_to_latent<Scalar>(tokens.value(), ch, n);
  return tape.push(std::move(out), {tokens}, [tokens, ch, n](ad::Tape<Scalar>& tp, std::size_t self) {
    tp.grad_ref(tokens.id) += latent_to_tokens<Scalar>(tp.grad_ref(self), ch, n);
  });
}

template <typename Scalar>
Latent<Scalar> VelocityModel<Scalar>::predict(const Latent<Scalar>& x, std::span<const double> r, std::span<const double> t,
                                              const PromptBatch<Scalar>& prompts) const {
  ad::Tape<Scalar> tape(/*recording=*/false);
  const auto bound = bind(tape);
  return forward(tape, bound, x, r, t, prompts).value();
}

template struct PromptBatch<float>;
template struct PromptBatch<double>;
template PromptBatch<float> encode_prompts<float>(std::span<const Prompt>, const PromptNormalization&);
template PromptBatch<double> encode_prompts<double>(std::span<const Prompt>, const PromptNormalization&);
template ParameterSet<float> init_parameters<float>(const ModelConfig&, std::uint64_t);
template ParameterSet<double> init_parameters<double>(const ModelConfig&, std::uint64_t);
template ad::Matrix<float> latent_to_tokens<float>(const Latent<float>&, int, int);
template ad::Matrix<double> latent_to_tokens<double>(const Latent<double>&, int, int);
template Latent<float> tokens_to_latent<float>(const ad::Matrix<float>&, int, int);
template Latent<double> tokens_to_latent<double>(const ad::Matrix<double>&, int, int);
template class VelocityModel<float>;
template class VelocityModel<double>;

}  // namespace fbbs
