#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fbbs/checkpoint.hpp"
#include "fbbs/probing.hpp"
#include "fbbs/rng.hpp"
#include "fbbs/signal.hpp"
#include "fbbs/velocity_model.hpp"

namespace fbbs {

struct InferenceConfig {
  int steps = 1;
  int brainstorm = 8;
  int probe_budget = 16;
  std::uint64_t seed = 11;
  bool use_ema = true;
  std::optional<double> selection_noise_snr_db;

  void validate(int q_max) const;
};

/// How a field is integrated: interval-average updates z + u(z, r, t) dt, or
/// Euler steps z + u(z, r, r) dt of an instantaneous field.
enum class VelocityMode { Average, Instantaneous };

/// Integrates `field` from 0 to 1 in `steps` uniform intervals; exactly
/// `steps` field evaluations.
template <typename Scalar>
Latent<Scalar> evolve(const VelocityField<Scalar>& field, Latent<Scalar> z0, const PromptBatch<Scalar>& prompts, int steps,
                      VelocityMode mode = VelocityMode::Average);

/// Constant-modulus beam from a (phase, amplitude) latent row of width 2 N_t.
BeamVector recover_beam(const Eigen::Ref<const Eigen::RowVectorXd>& latent);

/// Standard-normal prior for candidate `candidate` of user `user`; candidates
/// of one user are prefix-nested across brainstorm sizes.
Latent<float> candidate_prior(std::uint64_t seed, std::uint64_t user, int candidate, int width);

/// Trained predictor plus the prompt normalization it was fitted with.
class BeamGenerator {
 public:
  BeamGenerator(const Checkpoint& ckpt, bool use_ema, VelocityMode mode = VelocityMode::Average);

  [[nodiscard]] int n_antennas() const { return model_.config().seq_len; }
  [[nodiscard]] const PromptNormalization& normalization() const { return normalization_; }
  [[nodiscard]] VelocityField<float> field() const;

  /// Evolves and recovers one beam per prior row; `prompt_rows[i]` indexes the
  /// prompt used by prior row i.
  [[nodiscard]] std::vector<BeamVector> generate(std::span<const Prompt> prompts, std::span<const int> prompt_rows,
                                                 const Latent<float>& priors, int steps) const;

  /// M candidates for one prompt from priors candidate_prior(seed, user, 0..M-1).
  [[nodiscard]] std::vector<BeamVector> brainstorm(const Prompt& prompt, int m, int steps, std::uint64_t seed,
                                                   std::uint64_t user) const;

 private:
  VelocityModel<float> model_;
  PromptNormalization normalization_;
  VelocityMode mode_;
};

struct Selection {
  BeamVector beam;
  int index = 0;
};

/// Probes each candidate on `h` and keeps the strongest (lowest index on
/// ties). With `noise_snr_db`, each probe sees circular Gaussian noise whose
/// power is calibrated on the median DFT-codebook probing power.
Selection select_beam(const ComplexVector& h, std::span<const BeamVector> candidates, std::optional<double> noise_snr_db,
                      Rng& rng);

}  // namespace fbbs
