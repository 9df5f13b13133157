#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fbbs/rng.hpp"
#include "fbbs/signal.hpp"

namespace fbbs {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Columns are the probing beams.
struct Codebook {
  Eigen::MatrixXcd beams;

  [[nodiscard]] int n_beams() const { return static_cast<int>(beams.cols()); }
  [[nodiscard]] BeamVector beam(int k) const { return beams.col(k); }
};

/// Full-length RSRP report with availability mask; masked values are zero.
struct Prompt {
  Eigen::VectorXd values;
  Mask mask;

  [[nodiscard]] int q_max() const { return static_cast<int>(values.size()); }
  [[nodiscard]] int q_active() const { return static_cast<int>(mask.count()); }
};

Codebook dft_codebook(const ArrayGeometry& geom);

/// Noise power for a target SNR, calibrated on the median probing power.
double median_noise_power(const Eigen::VectorXd& noiseless_rsrp, double snr_db);

/// Per-beam received power |h^H w_i|^2, or |h^H w_i + n_i|^2 when `snr_db` is
/// set (n_i circular Gaussian, variance from median_noise_power()).
Eigen::VectorXd measure_rsrp(const ComplexVector& h, const Codebook& cb, std::optional<double> snr_db, Rng& rng);

/// floor(j * q_max / q) for j = 0..q-1.
std::vector<int> uniform_probe_indices(int q, int q_max);

Prompt make_prompt(const Eigen::VectorXd& rsrp, std::span<const int> indices);

/// First floor(p_full * B) masks are full before the shuffle; the rest keep a
/// uniformly spaced subset whose size is drawn from `budget_set`.
std::vector<Mask> stochastic_batch_masks(int batch_size, double p_full, std::span<const int> budget_set, int q_max, Rng& rng);

/// Applies `mask` to a full report.
Prompt apply_mask(const Eigen::VectorXd& rsrp, const Mask& mask);

}  // namespace fbbs
