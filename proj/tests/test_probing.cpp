#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <doctest.h>

#include "fbbs/errors.hpp"
#include "fbbs/probing.hpp"

using namespace fbbs;

TEST_CASE("dft codebook") {
  const Codebook cb = dft_codebook({8, 0.5});
  REQUIRE(cb.n_beams() == 8);
  for (int n = 0; n < 8; ++n) CHECK(std::abs(cb.beam(0)[n] - Complex(1 / std::sqrt(8.0), 0)) < 1e-15);
  CHECK((cb.beams.adjoint() * cb.beams - Eigen::MatrixXcd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
  for (int k = 0; k < 8; ++k)
    for (int n = 0; n < 8; ++n) CHECK(std::abs(std::abs(cb.beams(n, k)) - 1 / std::sqrt(8.0)) < 1e-15);
}

TEST_CASE("on-grid steering vectors select their own codeword") {
  // a(phi) matches beam k when sin(phi) = 2k/N (wrapped into [-1, 1)).
  const int n = 16;
  const Codebook cb = dft_codebook({n, 0.5});
  Rng rng(0);
  for (int k = 0; k < n; ++k) {
    double s = 2.0 * k / n;
    if (s >= 1.0) s -= 2.0;
    const ComplexVector h = steering_vector(std::asin(s), {n, 0.5});
    const Eigen::VectorXd c = measure_rsrp(h, cb, std::nullopt, rng);
    Eigen::Index best;
    c.maxCoeff(&best);
    CHECK(best == k);
    CHECK(c[k] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("noiseless rsrp of a codeword channel") {
  const Codebook cb = dft_codebook({8, 0.5});
  Rng rng(1);
  const ComplexVector h = cb.beam(3) * Complex(2.0, 0.0);
  const Eigen::VectorXd c = measure_rsrp(h, cb, std::nullopt, rng);
  for (int i = 0; i < 8; ++i) CHECK(c[i] == doctest::Approx(i == 3 ? 4.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("noise calibration and noisy power statistics") {
  CHECK(median_noise_power(Eigen::VectorXd::Constant(5, 2.5), 0.0) == doctest::Approx(2.5));
  CHECK(median_noise_power(Eigen::VectorXd::Constant(5, 2.5), 10.0) == doctest::Approx(0.25));

  const Codebook cb = dft_codebook({8, 0.5});
  Rng rng(2);
  ComplexVector h(8);
  for (auto& v : h) v = Complex(rng.normal(), rng.normal());
  const Eigen::VectorXd clean = measure_rsrp(h, cb, std::nullopt, rng);
  const double sigma2 = median_noise_power(clean, 5.0);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(8);
  const int draws = 100000;
  for (int d = 0; d < draws; ++d) {
    const Eigen::VectorXd noisy = measure_rsrp(h, cb, 5.0, rng);
    REQUIRE((noisy.array() >= 0.0).all());
    acc += noisy;
  }
  acc /= draws;
  for (int i = 0; i < 8; ++i) CHECK(std::abs(acc[i] - (clean[i] + sigma2)) <= 0.02 * (clean[i] + sigma2));
}

TEST_CASE("uniform probe indices") {
  CHECK(uniform_probe_indices(4, 8) == std::vector<int>{0, 2, 4, 6});
  CHECK(uniform_probe_indices(3, 64) == std::vector<int>{0, 21, 42});
  std::vector<int> all(32);
  std::iota(all.begin(), all.end(), 0);
  CHECK(uniform_probe_indices(32, 32) == all);
  CHECK_THROWS_AS(uniform_probe_indices(0, 8), ConfigError);
  CHECK_THROWS_AS(uniform_probe_indices(9, 8), ConfigError);

  for (int q_max : {8, 32, 64})
    for (int q = 1; q <= q_max; ++q) {
      const auto idx = uniform_probe_indices(q, q_max);
      REQUIRE(idx.size() == std::size_t(q));
      CHECK(idx.front() == 0);
      CHECK(std::is_sorted(idx.begin(), idx.end()));
      CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
      int gap = q_max - idx.back();
      for (std::size_t j = 1; j < idx.size(); ++j) gap = std::max(gap, idx[j] - idx[j - 1]);
      CHECK(gap <= (q_max + q - 1) / q);
    }
}

TEST_CASE("prompts") {
  const Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(6, 1.0, 6.0);
  std::vector<int> all(6);
  std::iota(all.begin(), all.end(), 0);
  const Prompt full = make_prompt(c, all);
  CHECK(full.values == c);
  CHECK(full.mask.all());

  const Prompt one = make_prompt(c, std::vector<int>{0});
  CHECK(one.q_active() == 1);
  CHECK(one.values[0] == 1.0);
  CHECK(one.values.tail(5).isZero());

  Eigen::VectorXd d = c;
  d[3] = 99.0;
  const std::vector<int> idx{0, 2, 4};
  CHECK(make_prompt(c, idx).values == make_prompt(d, idx).values);

  CHECK_THROWS_AS(make_prompt(c, std::vector<int>{}), EmptyMask);
  CHECK_THROWS_AS(make_prompt(c, std::vector<int>{6}), DimensionError);
}

TEST_CASE("stochastic batch masks") {
  Rng rng(3);
  const std::vector<int> budgets{9, 15, 21, 32, 64};
  for (int trial = 0; trial < 20; ++trial) {
    const auto masks = stochastic_batch_masks(32, 0.8, budgets, 64, rng);
    REQUIRE(masks.size() == 32);
    int full = 0;
    for (const auto& m : masks) {
      if (m.all()) {
        ++full;
        continue;
      }
      const int q = static_cast<int>(m.count());
      CHECK(std::find(budgets.begin(), budgets.end(), q) != budgets.end());
      const auto idx = uniform_probe_indices(q, 64);
      for (int i : idx) CHECK(m[i]);
    }
    // Partial masks drawn at Q = 64 are full as well.
    CHECK(full >= 25);
  }
  for (const auto& m : stochastic_batch_masks(10, 1.0, std::vector<int>{4}, 8, rng)) CHECK(m.all());

  // Full masks are not pinned to the first slots.
  std::set<int> full_slots;
  const std::vector<int> small{4};
  for (int trial = 0; trial < 50; ++trial) {
    const auto masks = stochastic_batch_masks(8, 0.5, small, 8, rng);
    int n_full = 0;
    for (int i = 0; i < 8; ++i)
      if (masks[i].all()) {
        full_slots.insert(i);
        ++n_full;
      }
    CHECK(n_full == 4);
  }
  CHECK(full_slots.size() == 8);
}
