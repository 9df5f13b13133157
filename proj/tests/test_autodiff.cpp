#include <cmath>
#include <complex>
#include <functional>
#include <numbers>

#include <doctest.h>

#include "fbbs/autodiff.hpp"
#include "fbbs/rng.hpp"

using namespace fbbs;
using Mat = ad::Matrix<double>;
using Var = ad::Var<double>;
using Op = std::function<Var(ad::Tape<double>&, std::vector<Var>&)>;

namespace {

Mat random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

/// Worst relative disagreement between tape gradients and central
/// differences of mse(op(inputs), target) over every input entry.
double gradient_error(const Op& op, std::vector<Mat> inputs, Rng& rng) {
  Mat target;
  auto loss = [&](std::vector<Mat>& xs, bool record, std::vector<Mat>* grads) {
    ad::Tape<double> tape(record);
    std::vector<Var> vars;
    for (auto& x : xs) vars.push_back(tape.variable_ref(x));
    Var out = op(tape, vars);
    if (target.size() == 0) target = random_matrix(out.rows(), out.cols(), rng);
    Var l = ad::mse(out, target);
    if (grads) {
      tape.backward(l);
      for (auto& v : vars) grads->push_back(tape.grad(v));
    }
    return l.value()(0, 0);
  };
  std::vector<Mat> grads;
  loss(inputs, true, &grads);
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data()[i];
      inputs[k].data()[i] = saved + h;
      const double up = loss(inputs, false, nullptr);
      inputs[k].data()[i] = saved - h;
      const double down = loss(inputs, false, nullptr);
      inputs[k].data()[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double g = grads[k].data()[i];
      worst = std::max(worst, std::abs(fd - g) / std::max(1e-7, std::abs(fd) + std::abs(g)));
    }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and linear op gradients") {
  Rng rng(11);
  CHECK(gradient_error([](auto&, auto& v) { return ad::matmul(v[0], v[1]); },
                       {random_matrix(3, 4, rng), random_matrix(4, 2, rng)}, rng) < 1e-6);
  CHECK(gradient_error([](auto&, auto& v) { return ad::linear(v[0], v[1], v[2]); },
                       {random_matrix(5, 3, rng), random_matrix(3, 4, rng), random_matrix(1, 4, rng)}, rng) < 1e-6);
  CHECK(gradient_error([](auto&, auto& v) { return ad::add(v[0], v[1]); },
                       {random_matrix(2, 3, rng), random_matrix(2, 3, rng)}, rng) < 1e-6);
  const Mat c = random_matrix(2, 3, rng);
  CHECK(gradient_error([&](auto&, auto& v) { return ad::add_constant(v[0], c); }, {random_matrix(2, 3, rng)}, rng) < 1e-6);
  CHECK(gradient_error([](auto&, auto& v) { return ad::silu(v[0]); }, {random_matrix(3, 5, rng)}, rng) < 1e-6);
  CHECK(gradient_error([](auto&, auto& v) { return ad::gelu(v[0]); }, {random_matrix(3, 5, rng)}, rng) < 1e-6);
  CHECK(gradient_error([](auto&, auto& v) { return ad::slice_cols(v[0], 1, 3); }, {random_matrix(3, 5, rng)}, rng) < 1e-6);
  CHECK(gradient_error([](auto&, auto& v) { return ad::layer_norm(v[0]); }, {random_matrix(4, 6, rng)}, rng) < 1e-5);
}

TEST_CASE("grouped conditioning op gradients") {
  Rng rng(12);
  CHECK(gradient_error([](auto&, auto& v) { return ad::modulate(v[0], v[1], v[2], 3); },
                       {random_matrix(6, 4, rng), random_matrix(2, 4, rng), random_matrix(2, 4, rng)}, rng) < 1e-6);
  CHECK(gradient_error([](auto&, auto& v) { return ad::gated_residual(v[0], v[1], v[2], 3); },
                       {random_matrix(6, 4, rng), random_matrix(2, 4, rng), random_matrix(6, 4, rng)}, rng) < 1e-6);
  Mat mask(6, 1);
  mask << 1, 0, 1, 0, 0, 1;
  CHECK(gradient_error([&](auto&, auto& v) { return ad::masked_mean_pool(v[0], mask, 3); }, {random_matrix(6, 4, rng)},
                       rng) < 1e-6);
}

TEST_CASE("rope attention gradients") {
  Rng rng(13);
  CHECK(gradient_error([](auto&, auto& v) { return ad::rope_attention(v[0], 5, 2); }, {random_matrix(10, 3 * 8, rng)},
                       rng) < 1e-5);
}

TEST_CASE("gelu and silu values") {
  ad::Tape<double> tape(false);
  Mat x(1, 3);
  x << -1.0, 0.0, 2.0;
  const Mat g = ad::gelu(tape.constant(x)).value();
  const double k = std::sqrt(2.0 / std::numbers::pi);
  for (int i = 0; i < 3; ++i) {
    const double v = x(0, i);
    CHECK(g(0, i) == doctest::Approx(0.5 * v * (1 + std::tanh(k * (v + 0.044715 * v * v * v)))));
  }
  const Mat s = ad::silu(tape.constant(x)).value();
  CHECK(s(0, 2) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("layer norm standardizes rows") {
  Rng rng(14);
  ad::Tape<double> tape(false);
  const Mat y = ad::layer_norm(tape.constant(random_matrix(4, 16, rng) * 3.0)).value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    CHECK(std::abs(y.row(i).mean()) < 1e-12);
    CHECK(y.row(i).squaredNorm() / 16.0 == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("masked mean pool ignores masked rows and rejects empty masks") {
  ad::Tape<double> tape(false);
  Mat e(4, 2);
  e << 1, 2, 100, 200, 3, 4, 5, 6;
  Mat mask(4, 1);
  mask << 1, 0, 1, 1;
  const Mat out = ad::masked_mean_pool(tape.constant(e), mask, 2).value();
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 2.0);
  CHECK(out(1, 0) == 4.0);
  CHECK(out(1, 1) == 5.0);
  Mat empty = Mat::Zero(4, 1);
  CHECK_THROWS_AS(ad::masked_mean_pool(tape.constant(e), empty, 2), EmptyMask);
}

TEST_CASE("rope attention matches a complex-rotation reference") {
  Rng rng(15);
  const int seq = 6, heads = 2, hd = 4, width = heads * hd;
  const Mat qkv = random_matrix(seq, 3 * width, rng);
  ad::Tape<double> tape(false);
  const Mat out = ad::rope_attention(tape.constant(qkv), seq, heads).value();

  for (int h = 0; h < heads; ++h) {
    auto rotate = [&](int col0, int pos) {
      Eigen::VectorXcd z(hd / 2);
      for (int i = 0; i < hd / 2; ++i) {
        const double theta = pos * std::pow(10000.0, -2.0 * i / hd);
        z[i] = std::complex<double>(qkv(pos, col0 + 2 * i), qkv(pos, col0 + 2 * i + 1)) * std::polar(1.0, theta);
      }
      return z;
    };
    for (int i = 0; i < seq; ++i) {
      Eigen::VectorXd scores(seq);
      const Eigen::VectorXcd qi = rotate(h * hd, i);
      for (int j = 0; j < seq; ++j) {
        const Eigen::VectorXcd kj = rotate(width + h * hd, j);
        double dot = 0.0;
        for (int p = 0; p < hd / 2; ++p) dot += qi[p].real() * kj[p].real() + qi[p].imag() * kj[p].imag();
        scores[j] = dot / std::sqrt(double(hd));
      }
      scores = (scores.array() - scores.maxCoeff()).exp();
      scores /= scores.sum();
      for (int d = 0; d < hd; ++d) {
        double expect = 0.0;
        for (int j = 0; j < seq; ++j) expect += scores[j] * qkv(j, 2 * width + h * hd + d);
        CHECK(out(i, h * hd + d) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("constants receive no gradient and backward needs a scalar") {
  ad::Tape<double> tape(true);
  Rng rng(16);
  const Mat a = random_matrix(2, 2, rng);
  Var x = tape.variable(random_matrix(2, 2, rng));
  Var c = tape.constant(a);
  Var l = ad::mse(ad::matmul(x, c), Mat(Mat::Zero(2, 2)));
  tape.backward(l);
  CHECK(tape.grad(c).isZero());
  CHECK(!tape.grad(x).isZero());
  CHECK_THROWS_AS(tape.backward(x), DimensionError);
}
