#include "fbbs/probing.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fbbs/errors.hpp"

namespace fbbs {

Codebook dft_codebook(const ArrayGeometry& geom) {
  geom.validate();
  const int n = geom.n_antennas;
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  Codebook cb{Eigen::MatrixXcd(n, n)};
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      cb.beams(i, k) = std::polar(norm, 2.0 * std::numbers::pi * static_cast<double>((k * i) % n) / n);
    }
  }
  return cb;
}

double median_noise_power(const Eigen::VectorXd& noiseless_rsrp, double snr_db) {
  std::vector<double> sorted(noiseless_rsrp.begin(), noiseless_rsrp.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return median / std::pow(10.0, snr_db / 10.0);
}

Eigen::VectorXd measure_rsrp(const ComplexVector& h, const Codebook& cb, std::optional<double> snr_db, Rng& rng) {
  if (cb.beams.rows() != h.size()) throw DimensionError("codebook and channel lengths differ");
  const Eigen::VectorXcd y = cb.beams.adjoint() * h;  // conj(h^H w_i)
  Eigen::VectorXd power = y.cwiseAbs2();
  if (!snr_db) return power;
  const double sigma = std::sqrt(median_noise_power(power, *snr_db) / 2.0);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double nr = sigma * rng.normal();
    const double ni = sigma * rng.normal();
    power[i] = std::norm(std::conj(y[i]) + Complex(nr, ni));
  }
  return power;
}

std::vector<int> uniform_probe_indices(int q, int q_max) {
  if (q < 1 || q > q_max) throw ConfigError("probing budget outside [1, q_max]");
  std::vector<int> idx(q);
  for (int j = 0; j < q; ++j) idx[j] = static_cast<int>((static_cast<long long>(j) * q_max) / q);
  return idx;
}

Prompt make_prompt(const Eigen::VectorXd& rsrp, std::span<const int> indices) {
  if (indices.empty()) throw EmptyMask("prompt needs at least one probed beam");
  Mask mask = Mask::Constant(rsrp.size(), false);
  for (int i : indices) {
    if (i < 0 || i >= rsrp.size()) throw DimensionError("probe index out of range");
    mask[i] = true;
  }
  return apply_mask(rsrp, mask);
}

Prompt apply_mask(const Eigen::VectorXd& rsrp, const Mask& mask) {
  if (mask.size() != rsrp.size()) throw DimensionError("mask and report lengths differ");
  Prompt p{Eigen::VectorXd::Zero(rsrp.size()), mask};
  for (Eigen::Index i = 0; i < rsrp.size(); ++i)
    if (mask[i]) p.values[i] = rsrp[i];
  return p;
}

std::vector<Mask> stochastic_batch_masks(int batch_size, double p_full, std::span<const int> budget_set, int q_max, Rng& rng) {
  if (budget_set.empty()) throw ConfigError("budget_set is empty");
  for (int q : budget_set)
    if (q < 1 || q > q_max) throw ConfigError("budget_set entry outside [1, q_max]");
  const int n_full = static_cast<int>(std::floor(p_full * batch_size + 1e-9));
  std::vector<Mask> masks;
  masks.reserve(batch_size);
  for (int b = 0; b < batch_size; ++b) {
    if (b < n_full) {
      masks.push_back(Mask::Constant(q_max, true));
      continue;
    }
    const int q = budget_set[rng.below(budget_set.size())];
    Mask m = Mask::Constant(q_max, false);
    for (int i : uniform_probe_indices(q, q_max)) m[i] = true;
    masks.push_back(std::move(m));
  }
  std::shuffle(masks.begin(), masks.end(), rng);
  return masks;
}

}  // namespace fbbs
