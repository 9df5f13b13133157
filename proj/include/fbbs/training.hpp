#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "fbbs/checkpoint.hpp"
#include "fbbs/rng.hpp"
#include "fbbs/sitegen.hpp"
#include "fbbs/velocity_model.hpp"

namespace fbbs {

struct TrainConfig {
  int max_epochs = 80;
  int stage1_epochs = 40;
  int batch_size = 32;
  double learning_rate = 2e-4;
  double weight_decay = 0.1;
  /// Fraction of Stage-II entries with r = t.
  double p = 0.7;
  double p_full = 0.8;
  std::vector<int> budget_set{5, 8, 11, 16, 32};
  double ema_decay = 0.995;
  std::uint64_t seed = 7;

  void validate(int q_max) const;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWOptions {
  double learning_rate = 2e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct OptimizerState {
  ParameterSet<Scalar> first_moment;
  ParameterSet<Scalar> second_moment;
  std::int64_t step = 0;

  static OptimizerState for_params(const ParameterSet<Scalar>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

/// Decoupled weight decay with bias-corrected moments; increments the step.
template <typename Scalar>
void adamw_step(ParameterSet<Scalar>& params, const ParameterSet<Scalar>& grads, OptimizerState<Scalar>& state,
                const AdamWOptions& opts);

/// ema <- decay * ema + (1 - decay) * params.
template <typename Scalar>
void ema_update(ParameterSet<Scalar>& ema, const ParameterSet<Scalar>& params, double decay);

// ---------------------------------------------------------------------------
// Losses

/// (1 - t) x0 + t x1, row-wise t.
template <typename Scalar>
Latent<Scalar> interpolate(const Latent<Scalar>& x0, const Latent<Scalar>& x1, std::span<const double> t);

template <typename Scalar>
Latent<Scalar> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

template <typename Scalar>
struct Stage1Draw {
  Latent<Scalar> x0;
  std::vector<double> t;
  Latent<Scalar> xt;
  Latent<Scalar> target;  // x1 - x0
};

template <typename Scalar>
Stage1Draw<Scalar> draw_stage1(const Latent<Scalar>& x1, Rng& rng);

template <typename Scalar>
struct Stage2Draw {
  Latent<Scalar> x0;
  std::vector<double> r, s, t, kappa;
  std::vector<bool> boundary;  // r == t entries
  Latent<Scalar> xr;
};

/// (r, t) from two sorted uniforms; floor(p * B) randomly chosen entries get
/// r := t; s = (1 - kappa) t + kappa r.
template <typename Scalar>
Stage2Draw<Scalar> draw_stage2(const Latent<Scalar>& x1, double p, Rng& rng);

/// Regression target for the r..t prediction: x1 - x0 on boundary entries,
/// otherwise (1 - kappa) u(x_r, r, s) + kappa u(x_s, s, t) with
/// x_s = x_r + (s - r) u(x_r, r, s). Always a plain (gradient-free) matrix.
template <typename Scalar>
Latent<Scalar> split_target(const VelocityField<Scalar>& field, const Stage2Draw<Scalar>& draw, const Latent<Scalar>& x1,
                            const PromptBatch<Scalar>& prompts);

template <typename Scalar>
struct LossResult {
  double loss = 0.0;
  ParameterSet<Scalar> grads;
};

/// Conditional flow matching on u(x_t, t, t) against x1 - x0.
template <typename Scalar>
LossResult<Scalar> stage1_loss(const VelocityModel<Scalar>& model, const Latent<Scalar>& x1,
                               const PromptBatch<Scalar>& prompts, Rng& rng);

/// Split-consistency distillation on u(x_r, r, t).
template <typename Scalar>
LossResult<Scalar> stage2_loss(const VelocityModel<Scalar>& model, const Latent<Scalar>& x1,
                               const PromptBatch<Scalar>& prompts, double p, Rng& rng);

/// Loss and parameter gradients of mse(u(x, r, t), target).
template <typename Scalar>
LossResult<Scalar> regression_loss(const VelocityModel<Scalar>& model, const Latent<Scalar>& x, std::span<const double> r,
                                   std::span<const double> t, const PromptBatch<Scalar>& prompts,
                                   const Latent<Scalar>& target);

// ---------------------------------------------------------------------------
// Training loop

/// Target rows for a dataset split: [phase_row | amp_row] per record, each
/// amplitude row rescaled to unit RMS.
Latent<float> target_latents(std::span<const DatasetRecord> records);

/// Full noiseless DFT-codebook reports for a dataset split.
std::vector<Eigen::VectorXd> noiseless_reports(std::span<const DatasetRecord> records, int n_antennas);

/// dB statistics of every training report entry.
PromptNormalization fit_normalization(std::span<const Eigen::VectorXd> reports);

struct LossRecord {
  int epoch = 0;
  std::int64_t step = 0;
  int stage = 1;
  double loss = 0.0;
};

struct TrainResult {
  Checkpoint final;
  /// Snapshot at the end of Stage I (the flow-matching teacher).
  Checkpoint teacher;
  std::vector<LossRecord> history;
};

using EpochCallback = std::function<void(int epoch, int stage, double mean_loss)>;

TrainResult train(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = {});

void write_loss_csv(std::span<const LossRecord> history, const std::filesystem::path& path);

}  // namespace fbbs
