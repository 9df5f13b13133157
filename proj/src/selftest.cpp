#include "fbbs/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fbbs/inference.hpp"
#include "fbbs/sitegen.hpp"
#include "fbbs/training.hpp"

namespace fbbs {

namespace {

ComplexVector random_complex(int n, Rng& rng) {
  ComplexVector x(n);
  for (auto& v : x) v = Complex(rng.normal(), rng.normal());
  return x;
}

CheckResult check(std::string name, double error, double tolerance) {
  return {std::move(name), error <= tolerance, error, tolerance};
}

CheckResult dft_unitarity(Rng& rng) {
  double err = 0.0;
  for (int n : {4, 32, 64}) {
    Eigen::MatrixXcd f(n, n);
    for (int k = 0; k < n; ++k) f.col(k) = dft(ComplexVector::Unit(n, k));
    err = std::max(err, (f.adjoint() * f - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff());
    for (int trial = 0; trial < 20; ++trial) {
      const ComplexVector x = random_complex(n, rng);
      err = std::max(err, (idft(dft(x)) - x).cwiseAbs().maxCoeff());
      err = std::max(err, std::abs(dft(x).norm() - x.norm()) / x.norm());
    }
  }
  return check("dft unitarity", err, 1e-12);
}

CheckResult steering_norms(Rng& rng) {
  double err = 0.0;
  for (int n : {2, 8, 32, 64})
    for (int trial = 0; trial < 50; ++trial) {
      const double phi = rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
      err = std::max(err, std::abs(steering_vector(phi, ArrayGeometry{n, 0.5}).norm() - 1.0));
    }
  return check("steering vector norms", err, 1e-12);
}

CheckResult mrt_round_trip(Rng& rng) {
  double err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ComplexVector h = random_complex(32, rng);
    const BeamVector mrt = mrt_beamformer(h);
    for (double s : {1e-3, 1.0, 1e3}) {
      const TargetSample t = target_sample(h, s);
      Eigen::RowVectorXd latent(64);
      latent << t.phase_row.transpose(), t.amp_row.transpose();
      err = std::max(err, (recover_beam(latent) - mrt).cwiseAbs().maxCoeff());
    }
  }
  return check("mrt round trip through beam recovery", err, 1e-12);
}

/// Flow dx/dtau = lambda * x, element-wise; its interval-average velocity is
/// x (exp(lambda (t - r)) - 1) / (t - r).
struct ExponentialFlow {
  Eigen::RowVectorXd lambda;

  [[nodiscard]] Latent<double> average(const Latent<double>& x, std::span<const double> r, std::span<const double> t) const {
    Latent<double> u(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double dt = t[i] - r[i];
        u(i, j) = dt == 0.0 ? lambda[j] * x(i, j) : x(i, j) * std::expm1(lambda[j] * dt) / dt;
      }
    return u;
  }
};

CheckResult split_identity(Rng& rng) {
  const int b = 64, w = 16;
  ExponentialFlow flow{Eigen::RowVectorXd::NullaryExpr(w, [&] { return rng.uniform(-1.0, 1.0); })};
  const VelocityField<double> field = [&](const Latent<double>& x, std::span<const double> r, std::span<const double> t,
                                          const PromptBatch<double>&) { return flow.average(x, r, t); };
  Stage2Draw<double> d;
  d.x0 = standard_normal<double>(b, w, rng);
  d.xr = standard_normal<double>(b, w, rng);
  d.boundary.assign(b, false);
  for (int i = 0; i < b; ++i) {
    double u1 = rng.uniform(), u2 = rng.uniform();
    if (u1 > u2) std::swap(u1, u2);
    d.r.push_back(u1);
    d.t.push_back(u2);
    d.kappa.push_back(rng.uniform());
    d.s.push_back((1.0 - d.kappa.back()) * u2 + d.kappa.back() * u1);
  }
  const PromptBatch<double> none{ad::Matrix<double>::Zero(b, 1), ad::Matrix<double>::Zero(b, 1)};
  const Latent<double> target = split_target<double>(field, d, d.xr, none);
  const Latent<double> exact = flow.average(d.xr, d.r, d.t);
  double err = 0.0;
  for (int i = 0; i < b; ++i)
    err = std::max(err, (d.t[i] - d.r[i]) * (target.row(i) - exact.row(i)).cwiseAbs().maxCoeff());
  return check("split consistency identity", err, 1e-12);
}

CheckResult affine_interval_updates(Rng& rng) {
  // x(tau) = x0 + a tau + b tau^2 / 2 has average velocity a + b (r + t) / 2.
  const int w = 16;
  const Eigen::RowVectorXd a = Eigen::RowVectorXd::NullaryExpr(w, [&] { return rng.normal(); });
  const Eigen::RowVectorXd bcoef = Eigen::RowVectorXd::NullaryExpr(w, [&] { return rng.normal(); });
  const ExponentialFlow flow{Eigen::RowVectorXd::NullaryExpr(w, [&] { return rng.uniform(-1.0, 1.0); })};
  const PromptBatch<double> none{ad::Matrix<double>::Zero(4, 1), ad::Matrix<double>::Zero(4, 1)};
  const Latent<double> x0 = standard_normal<double>(4, w, rng);
  int calls = 0;
  const VelocityField<double> affine = [&](const Latent<double>& x, std::span<const double> r, std::span<const double> t,
                                           const PromptBatch<double>&) {
    ++calls;
    Latent<double> u(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) u.row(i) = a + bcoef * (0.5 * (r[i] + t[i]));
    return u;
  };
  const VelocityField<double> exponential = [&](const Latent<double>& x, std::span<const double> r,
                                                std::span<const double> t,
                                                const PromptBatch<double>&) { return flow.average(x, r, t); };
  double err = 0.0;
  for (int steps : {1, 2, 3, 7, 64}) {
    calls = 0;
    const Latent<double> z = evolve<double>(affine, x0, none, steps);
    if (calls != steps) err = 1.0;
    Latent<double> expected = x0;
    expected.rowwise() += a + 0.5 * bcoef;
    err = std::max(err, (z - expected).cwiseAbs().maxCoeff());
    Latent<double> expected_exp = x0;
    for (Eigen::Index j = 0; j < w; ++j) expected_exp.col(j) *= std::exp(flow.lambda[j]);
    err = std::max(err, (evolve<double>(exponential, x0, none, steps) - expected_exp).cwiseAbs().maxCoeff());
  }
  return check("exact interval updates", err, 1e-10);
}

ModelConfig miniature_config() {
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.seq_len = 8;
  cfg.cond_dim = 8;
  return cfg;
}

template <typename Scalar>
ParameterSet<Scalar> randomized_parameters(const ModelConfig& cfg, Rng& rng, double scale) {
  ParameterSet<Scalar> p = init_parameters<Scalar>(cfg, rng());
  for (auto& t : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(scale * rng.normal());
  return p;
}

std::vector<Prompt> random_prompts(int batch, int q_max, Rng& rng) {
  std::vector<Prompt> prompts;
  for (int b = 0; b < batch; ++b) {
    Eigen::VectorXd rsrp = Eigen::VectorXd::NullaryExpr(q_max, [&] { return std::exp(rng.normal()); });
    Mask mask = Mask::NullaryExpr(q_max, [&] { return rng.uniform() < 0.5; });
    mask[static_cast<Eigen::Index>(rng.below(q_max))] = true;
    prompts.push_back(apply_mask(rsrp, mask));
  }
  return prompts;
}

CheckResult gradient_check(Rng& rng) {
  const ModelConfig cfg = miniature_config();
  VelocityModel<double> model(cfg, randomized_parameters<double>(cfg, rng, 0.3));
  const int batch = 3, width = 2 * cfg.seq_len;
  const Latent<double> x = standard_normal<double>(batch, width, rng);
  const Latent<double> target = standard_normal<double>(batch, width, rng);
  const std::vector<double> r{0.1, 0.4, 0.7}, t{0.3, 0.4, 0.9};
  const auto prompts = random_prompts(batch, cfg.seq_len, rng);
  const auto encoded = encode_prompts<double>(prompts, PromptNormalization{0.0, 2.0});
  const LossResult<double> base = regression_loss<double>(model, x, r, t, encoded, target);

  const double h = 1e-5;
  double err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = rng.below(model.params().size());
    auto& tensor = model.params().tensors[k];
    const Eigen::Index i = static_cast<Eigen::Index>(rng.below(tensor.size()));
    const double saved = tensor.data()[i];
    tensor.data()[i] = saved + h;
    const double up = regression_loss<double>(model, x, r, t, encoded, target).loss;
    tensor.data()[i] = saved - h;
    const double down = regression_loss<double>(model, x, r, t, encoded, target).loss;
    tensor.data()[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double analytic = base.grads.tensors[k].data()[i];
    err = std::max(err, std::abs(fd - analytic) / std::max(1e-6, std::abs(fd) + std::abs(analytic)));
  }
  return check("finite-difference gradients", err, 1e-4);
}

CheckResult adamw_oracle() {
  ParameterSet<double> p, g;
  p.add("w", ad::Matrix<double>{{1.0, -2.0}});
  g.add("w", ad::Matrix<double>{{0.5, 0.1}});
  auto state = OptimizerState<double>::for_params(p);
  adamw_step(p, g, state, AdamWOptions{0.1, 0.01});
  // First step: p (1 - lr wd) - lr g / (|g| + eps), bias corrections cancel.
  const double err = std::max(std::abs(p.tensors[0](0, 0) - 0.899000002), std::abs(p.tensors[0](0, 1) + 2.09799999));
  return check("adamw single step", err, 1e-9);
}

CheckResult probe_indices() {
  const bool ok = uniform_probe_indices(4, 8) == std::vector<int>{0, 2, 4, 6} &&
                  uniform_probe_indices(3, 64) == std::vector<int>{0, 21, 42};
  return check("uniform probe index sets", ok ? 0.0 : 1.0, 0.0);
}

CheckResult mask_invariance(Rng& rng) {
  ModelConfig cfg;
  cfg.seq_len = 32;
  const VelocityModel<float> model(cfg, randomized_parameters<float>(cfg, rng, 0.05));
  const PromptNormalization norm{-20.0, 10.0};
  double err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto prompts = random_prompts(1, cfg.seq_len, rng);
    const Latent<float> x = standard_normal<float>(1, 2 * cfg.seq_len, rng);
    const std::vector<double> r{rng.uniform()}, t{r[0] + (1 - r[0]) * rng.uniform()};
    const Latent<float> a = model.predict(x, r, t, encode_prompts<float>(prompts, norm));
    for (Eigen::Index i = 0; i < prompts[0].values.size(); ++i)
      if (!prompts[0].mask[i]) prompts[0].values[i] = std::exp(5.0 * rng.normal());
    const Latent<float> b = model.predict(x, r, t, encode_prompts<float>(prompts, norm));
    err = std::max(err, static_cast<double>((a - b).cwiseAbs().maxCoeff() / std::max(1e-30f, a.cwiseAbs().maxCoeff())));
  }
  return check("prompt mask invariance", err, 1e-6);
}

}  // namespace

std::vector<CheckResult> run_selftest(std::uint64_t seed) {
  Rng root(seed);
  Rng r1 = root.split(1), r2 = root.split(2), r3 = root.split(3), r4 = root.split(4), r5 = root.split(5),
      r6 = root.split(6), r7 = root.split(7);
  return {dft_unitarity(r1),           steering_norms(r2), mrt_round_trip(r3), split_identity(r4),
          affine_interval_updates(r5), gradient_check(r6), adamw_oracle(),     probe_indices(),
          mask_invariance(r7)};
}

}  // namespace fbbs
