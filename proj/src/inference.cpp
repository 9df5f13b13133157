#include "fbbs/inference.hpp"

#include <cmath>

#include "fbbs/errors.hpp"
#include "fbbs/training.hpp"

namespace fbbs {

void InferenceConfig::validate(int q_max) const {
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (brainstorm < 1) throw ConfigError("brainstorm must be at least 1");
  if (probe_budget < 1 || probe_budget > q_max) throw ConfigError("probe_budget outside [1, Q_max]");
}

template <typename Scalar>
Latent<Scalar> evolve(const VelocityField<Scalar>& field, Latent<Scalar> z, const PromptBatch<Scalar>& prompts, int steps,
                      VelocityMode mode) {
  if (steps < 1) throw ConfigError("steps must be at least 1");
  const double delta = 1.0 / steps;
  std::vector<double> r(z.rows()), t(z.rows());
  for (int n = 0; n < steps; ++n) {
    const double tau_r = n * delta;
    const double tau_t = n + 1 == steps ? 1.0 : (n + 1) * delta;
    std::fill(r.begin(), r.end(), tau_r);
    std::fill(t.begin(), t.end(), mode == VelocityMode::Average ? tau_t : tau_r);
    z += static_cast<Scalar>(tau_t - tau_r) * field(z, r, t, prompts);
  }
  return z;
}

template Latent<float> evolve<float>(const VelocityField<float>&, Latent<float>, const PromptBatch<float>&, int, VelocityMode);
template Latent<double> evolve<double>(const VelocityField<double>&, Latent<double>, const PromptBatch<double>&, int,
                                       VelocityMode);

BeamVector recover_beam(const Eigen::Ref<const Eigen::RowVectorXd>& latent) {
  if (latent.size() % 2 != 0 || latent.size() < 4) throw DimensionError("latent must hold two rows of N_t >= 2 values");
  const Eigen::Index n = latent.size() / 2;
  ComplexVector spectrum(n);
  for (Eigen::Index i = 0; i < n; ++i) spectrum[i] = std::polar(1.0, latent[i]) * latent[n + i];
  return phase_only_beam(idft(spectrum));
}

Latent<float> candidate_prior(std::uint64_t seed, std::uint64_t user, int candidate, int width) {
  Rng rng = Rng(seed, /*stream=*/0x9a10).split(user).split(static_cast<std::uint64_t>(candidate));
  return standard_normal<float>(1, width, rng);
}

BeamGenerator::BeamGenerator(const Checkpoint& ckpt, bool use_ema, VelocityMode mode)
    : model_(ckpt.config, ckpt.weights(use_ema)), normalization_(ckpt.normalization), mode_(mode) {
  if (ckpt.is_discriminative()) throw ConfigError("checkpoint holds a discriminative baseline, not a velocity model");
}

VelocityField<float> BeamGenerator::field() const {
  return [this](const Latent<float>& x, std::span<const double> r, std::span<const double> t,
                const PromptBatch<float>& prompts) { return model_.predict(x, r, t, prompts); };
}

std::vector<BeamVector> BeamGenerator::generate(std::span<const Prompt> prompts, std::span<const int> prompt_rows,
                                                const Latent<float>& priors, int steps) const {
  if (static_cast<std::size_t>(priors.rows()) != prompt_rows.size()) throw DimensionError("one prompt row per prior row");
  const PromptBatch<float> all = encode_prompts<float>(prompts, normalization_);
  const PromptBatch<float> batch = all.select(prompt_rows);
  const Latent<float> z1 = evolve<float>(field(), priors, batch, steps, mode_);
  std::vector<BeamVector> beams;
  beams.reserve(z1.rows());
  for (Eigen::Index i = 0; i < z1.rows(); ++i) beams.push_back(recover_beam(z1.row(i).cast<double>()));
  return beams;
}

std::vector<BeamVector> BeamGenerator::brainstorm(const Prompt& prompt, int m, int steps, std::uint64_t seed,
                                                  std::uint64_t user) const {
  if (m < 1) throw ConfigError("brainstorm number must be at least 1");
  const int width = 2 * n_antennas();
  Latent<float> priors(m, width);
  for (int k = 0; k < m; ++k) priors.row(k) = candidate_prior(seed, user, k, width);
  const std::vector<int> rows(m, 0);
  return generate(std::span<const Prompt>(&prompt, 1), rows, priors, steps);
}

Selection select_beam(const ComplexVector& h, std::span<const BeamVector> candidates, std::optional<double> noise_snr_db,
                      Rng& rng) {
  if (candidates.empty()) throw ConfigError("no candidate beams to select from");
  double sigma = 0.0;
  if (noise_snr_db) {
    const Codebook cb = dft_codebook(ArrayGeometry{static_cast<int>(h.size()), 0.5});
    const Eigen::VectorXd probe = (cb.beams.adjoint() * h).cwiseAbs2();
    sigma = std::sqrt(median_noise_power(probe, *noise_snr_db) / 2.0);
  }
  Selection best{candidates.front(), 0};
  double best_power = -1.0;
  for (std::size_t m = 0; m < candidates.size(); ++m) {
    Complex y = h.dot(candidates[m]);
    if (noise_snr_db) y += Complex(sigma * rng.normal(), sigma * rng.normal());
    const double power = std::norm(y);
    if (power > best_power) {
      best_power = power;
      best = {candidates[m], static_cast<int>(m)};
    }
  }
  return best;
}

}  // namespace fbbs
