#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fbbs/checkpoint.hpp"
#include "fbbs/probing.hpp"
#include "fbbs/sitegen.hpp"

namespace fbbs {

/// Sweeps the `budget` uniformly spaced codewords and returns the strongest.
BeamVector exhaustive_select(const ComplexVector& h, const Codebook& cb, int budget, std::optional<double> noise_snr_db,
                             Rng& rng);

struct DiscriminativeConfig {
  std::vector<int> hidden_dims;  // empty: two layers of 4 N_t
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 13;

  void validate() const;
};

/// Feed-forward regressor from the Q probed features (same dB normalization
/// as the generative model) to the angular target. Stored in a checkpoint
/// with n_blocks = 0 and cond_dim = Q.
class DiscriminativePredictor {
 public:
  explicit DiscriminativePredictor(Checkpoint ckpt, bool use_ema = true);

  [[nodiscard]] int budget() const { return ckpt_.config.cond_dim; }
  [[nodiscard]] int n_antennas() const { return ckpt_.config.seq_len; }
  [[nodiscard]] const Checkpoint& checkpoint() const { return ckpt_; }

  /// Predicted target latents, one row per prompt (batch x 2 N_t).
  [[nodiscard]] ad::Matrix<float> predict(std::span<const Prompt> prompts) const;
  [[nodiscard]] BeamVector predict_beam(const Prompt& prompt) const;

 private:
  Checkpoint ckpt_;
  bool use_ema_;
};

/// Active features of uniform-budget prompts, batch x Q.
ad::Matrix<float> discriminative_features(std::span<const Prompt> prompts, const PromptNormalization& norm, int budget);

Checkpoint train_discriminative(const Dataset& dataset, int budget, const DiscriminativeConfig& cfg);

}  // namespace fbbs
