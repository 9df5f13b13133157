#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fbbs/autodiff.hpp"
#include "fbbs/params.hpp"
#include "fbbs/probing.hpp"

namespace fbbs {

struct ModelConfig {
  int embed_dim = 128;
  int n_blocks = 3;
  int n_heads = 4;
  double ffn_multiplier = 2.0;
  int n_channels = 2;
  int seq_len = 32;
  int cond_dim = 64;

  void validate() const;
  [[nodiscard]] int ffn_dim() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Standardization of active prompt entries in dB.
struct PromptNormalization {
  double mean_db = 0.0;
  double std_db = 1.0;

  [[nodiscard]] double feature(double rsrp) const;
};

/// Batched latent state: one row per sample, laid out channel-major
/// (entry c * N_t + n holds channel c of antenna position n).
template <typename Scalar>
using Latent = ad::Matrix<Scalar>;

/// Encoder inputs for a batch of prompts: normalized features (zero where
/// masked) and the 0/1 availability mask, both batch x Q_max.
template <typename Scalar>
struct PromptBatch {
  ad::Matrix<Scalar> features;
  ad::Matrix<Scalar> mask;

  [[nodiscard]] Eigen::Index size() const { return features.rows(); }
  /// Rows selected by `rows`, in order.
  [[nodiscard]] PromptBatch select(std::span<const int> rows) const;
};

/// Any velocity field u(x, r, t, prompt) evaluated on a batch.
template <typename Scalar>
using VelocityField = std::function<Latent<Scalar>(const Latent<Scalar>&, std::span<const double>, std::span<const double>,
                                                   const PromptBatch<Scalar>&)>;

template <typename Scalar>
PromptBatch<Scalar> encode_prompts(std::span<const Prompt> prompts, const PromptNormalization& norm);

/// Indices of every tensor in the parameter set, resolved once per config.
struct ModelLayout {
  struct Block {
    std::size_t adaln_w, adaln_b, qkv_w, qkv_b, proj_w, proj_b, ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  };
  std::size_t input_w, input_b;
  std::size_t time_w0, time_b0, time_w1, time_b1;
  std::size_t cond_value_w, cond_value_b;
  std::size_t cond_pos_w0, cond_pos_b0, cond_pos_w1, cond_pos_b1;
  std::size_t cond_out_w0, cond_out_b0, cond_out_w1, cond_out_b1;
  std::vector<Block> blocks;
  std::size_t final_adaln_w, final_adaln_b, head_w, head_b;
};

/// Xavier-uniform linear weights, zero biases; adaLN projections and the
/// output head start at exactly zero.
template <typename Scalar>
ParameterSet<Scalar> init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Standard sinusoidal embedding of a scalar position into `dim` values.
Eigen::RowVectorXd sinusoidal_embedding(double position, int dim, double max_period = 10000.0);

/// Conditional velocity predictor u(x, r, t, prompt): a 1-D transformer over
/// antenna positions with RoPE attention and adaLN conditioning on the sum
/// of an (r, t) embedding and the masked prompt encoding.
template <typename Scalar>
class VelocityModel {
 public:
  using Mat = ad::Matrix<Scalar>;
  using Var = ad::Var<Scalar>;

  VelocityModel(ModelConfig config, ParameterSet<Scalar> params);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const ParameterSet<Scalar>& params() const { return params_; }
  ParameterSet<Scalar>& params() { return params_; }

  /// Tape leaves for every parameter; trainable leaves when the tape records.
  [[nodiscard]] std::vector<Var> bind(ad::Tape<Scalar>& tape) const;

  /// Velocity in latent layout (batch x C*N_t) built on `tape`.
  Var forward(ad::Tape<Scalar>& tape, std::span<const Var> bound, const Latent<Scalar>& x, std::span<const double> r,
              std::span<const double> t, const PromptBatch<Scalar>& prompts) const;

  /// Gradient-free evaluation.
  [[nodiscard]] Latent<Scalar> predict(const Latent<Scalar>& x, std::span<const double> r, std::span<const double> t,
                                       const PromptBatch<Scalar>& prompts) const;

  /// Condition embedding e_cond (batch x embed_dim).
  Var cond_encode(ad::Tape<Scalar>& tape, std::span<const Var> bound, const PromptBatch<Scalar>& prompts) const;

  /// Interval embedding e_time(r, t) (batch x embed_dim).
  Var time_embed(ad::Tape<Scalar>& tape, std::span<const Var> bound, std::span<const double> r,
                 std::span<const double> t) const;

  /// Runs block `index` on tokens `h` under conditioning `c` (already SiLU'd).
  Var block(ad::Tape<Scalar>& tape, std::span<const Var> bound, std::size_t index, Var h, Var c) const;

 private:
  ModelConfig config_;
  ModelLayout layout_;
  ParameterSet<Scalar> params_;
};

ModelLayout model_layout(const ModelConfig& config);

/// Latent (batch x C*N) <-> token matrix (batch*N x C).
template <typename Scalar>
ad::Matrix<Scalar> latent_to_tokens(const Latent<Scalar>& x, int n_channels, int seq_len);
template <typename Scalar>
Latent<Scalar> tokens_to_latent(const ad::Matrix<Scalar>& tokens, int n_channels, int seq_len);

}  // namespace fbbs
