#pragma once

#include <complex>

#include <Eigen/Dense>

namespace fbbs {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
/// Unit-norm beam with entries of magnitude 1/sqrt(N_t).
using BeamVector = Eigen::VectorXcd;

/// Uniform linear array, azimuth steering only.
struct ArrayGeometry {
  int n_antennas = 32;
  double spacing_ratio = 0.5;  // d / lambda

  void validate() const;
};

/// Phase in (-pi, pi]; the phase of 0 is 0.
double phase_of(Complex z);

ComplexVector steering_vector(double phi, const ArrayGeometry& geom);

/// Unitary DFT: X[k] = 1/sqrt(N) sum_n x[n] exp(-j 2 pi k n / N).
ComplexVector dft(const ComplexVector& x);
ComplexVector idft(const ComplexVector& x);

BeamVector mrt_beamformer(const ComplexVector& h);

/// Constant-modulus beam whose entry phases follow `v`.
BeamVector phase_only_beam(const ComplexVector& v);

/// |h^H w|^2.
double beam_gain(const ComplexVector& h, const BeamVector& w);

/// 10 log10(|h^H w|^2 / |h^H w_mrt|^2); at most 0 for constant-modulus w.
double normalized_gain_db(const ComplexVector& h, const BeamVector& w);

}  // namespace fbbs
