#include "fbbs/signal.hpp"

#include <cmath>
#include <numbers>

#include "fbbs/errors.hpp"

namespace fbbs {

void ArrayGeometry::validate() const {
  if (n_antennas < 2) throw ConfigError("n_antennas must be at least 2");
  if (!(spacing_ratio > 0.0) || !std::isfinite(spacing_ratio)) throw ConfigError("spacing_ratio must be positive");
}

double phase_of(Complex z) {
  if (z == Complex(0.0, 0.0)) return 0.0;
  const double a = std::arg(z);
  // std::arg returns [-pi, pi]; fold -pi onto pi.
  return a == -std::numbers::pi ? std::numbers::pi : a;
}

ComplexVector steering_vector(double phi, const ArrayGeometry& geom) {
  if (!std::isfinite(phi)) throw InvalidAngle("steering angle must be finite");
  geom.validate();
  const double step = 2.0 * std::numbers::pi * geom.spacing_ratio * std::sin(phi);
  const double norm = 1.0 / std::sqrt(static_cast<double>(geom.n_antennas));
  ComplexVector a(geom.n_antennas);
  for (int n = 0; n < geom.n_antennas; ++n) a[n] = std::polar(norm, step * n);
  return a;
}

namespace {

ComplexVector unitary_dft(const ComplexVector& x, double sign) {
  const Eigen::Index n = x.size();
  if (n < 1) throw DimensionError("dft of an empty vector");
  ComplexVector out(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    Complex acc(0.0, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      // Reduce k*i mod n first so large indices keep full phase accuracy.
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((k * i) % n) / static_cast<double>(n);
      acc += x[i] * Complex(std::cos(angle), std::sin(angle));
    }
    out[k] = acc * scale;
  }
  return out;
}

}  // namespace

ComplexVector dft(const ComplexVector& x) { return unitary_dft(x, -1.0); }

ComplexVector idft(const ComplexVector& x) { return unitary_dft(x, 1.0); }

BeamVector phase_only_beam(const ComplexVector& v) {
  const double norm = 1.0 / std::sqrt(static_cast<double>(v.size()));
  BeamVector w(v.size());
  for (Eigen::Index n = 0; n < v.size(); ++n) w[n] = std::polar(norm, phase_of(v[n]));
  return w;
}

BeamVector mrt_beamformer(const ComplexVector& h) { return phase_only_beam(h); }

double beam_gain(const ComplexVector& h, const BeamVector& w) {
  if (h.size() != w.size()) throw DimensionError("channel and beam lengths differ");
  return std::norm(h.dot(w));  // Eigen's dot conjugates the left operand
}

double normalized_gain_db(const ComplexVector& h, const BeamVector& w) {
  const double best = beam_gain(h, mrt_beamformer(h));
  if (!(best > 0.0)) throw DegenerateChannel("channel has zero MRT gain");
  return 10.0 * std::log10(beam_gain(h, w) / best);
}

}  // namespace fbbs
