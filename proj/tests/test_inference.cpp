#include <cmath>

#include <doctest.h>

#include "fbbs/errors.hpp"
#include "fbbs/inference.hpp"
#include "fbbs/training.hpp"

using namespace fbbs;

namespace {

Checkpoint random_checkpoint(int n_t = 8, std::uint64_t seed = 1) {
  Checkpoint ckpt;
  ckpt.config.embed_dim = 16;
  ckpt.config.n_blocks = 1;
  ckpt.config.n_heads = 2;
  ckpt.config.seq_len = n_t;
  ckpt.config.cond_dim = n_t;
  ckpt.raw = init_parameters<float>(ckpt.config, seed);
  Rng rng(seed, 9);
  for (auto& t : ckpt.raw.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += static_cast<float>(0.3 * rng.normal());
  ckpt.ema = ckpt.raw;
  ckpt.normalization = {-10.0, 5.0};
  return ckpt;
}

ComplexVector random_channel(int n, Rng& rng) {
  ComplexVector h(n);
  for (auto& v : h) v = {rng.normal(), rng.normal()};
  return h;
}

Prompt full_prompt(const ComplexVector& h) {
  Rng unused(0);
  const Codebook cb = dft_codebook({static_cast<int>(h.size()), 0.5});
  return make_prompt(measure_rsrp(h, cb, std::nullopt, unused), uniform_probe_indices(static_cast<int>(h.size()), static_cast<int>(h.size())));
}

}  // namespace

TEST_CASE("evolve is exact for a constant field at any step count") {
  Rng rng(1);
  const Latent<double> z0 = standard_normal<double>(3, 6, rng);
  const Eigen::RowVectorXd c = Eigen::RowVectorXd::LinSpaced(6, -2.0, 3.0);
  PromptBatch<double> prompts{ad::Matrix<double>::Zero(3, 4), ad::Matrix<double>::Zero(3, 4)};
  for (int steps : {1, 2, 5, 64}) {
    int calls = 0;
    const VelocityField<double> field = [&](const Latent<double>& x, std::span<const double>, std::span<const double>,
                                            const PromptBatch<double>&) {
      ++calls;
      Latent<double> u(x.rows(), x.cols());
      u.rowwise() = c;
      return u;
    };
    const Latent<double> z1 = evolve<double>(field, z0, prompts, steps);
    CHECK(calls == steps);
    CHECK((z1 - (z0.rowwise() + c)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("single-step evolve uses the whole interval") {
  PromptBatch<double> prompts{ad::Matrix<double>::Zero(1, 2), ad::Matrix<double>::Zero(1, 2)};
  std::vector<std::pair<double, double>> seen;
  const VelocityField<double> field = [&](const Latent<double>& x, std::span<const double> r, std::span<const double> t,
                                          const PromptBatch<double>&) {
    seen.emplace_back(r[0], t[0]);
    return Latent<double>(x * 2.0);
  };
  const Latent<double> z0 = Latent<double>::Constant(1, 2, 1.5);
  const Latent<double> z1 = evolve<double>(field, z0, prompts, 1);
  REQUIRE(seen.size() == 1);
  CHECK(seen[0].first == 0.0);
  CHECK(seen[0].second == 1.0);
  CHECK(z1(0, 0) == doctest::Approx(4.5));

  seen.clear();
  evolve<double>(field, z0, prompts, 3);
  REQUIRE(seen.size() == 3);
  CHECK(seen[1].first == doctest::Approx(1.0 / 3));
  CHECK(seen[2].second == 1.0);

  seen.clear();
  evolve<double>(field, z0, prompts, 2, VelocityMode::Instantaneous);
  CHECK(seen[1].first == seen[1].second);
  CHECK_THROWS_AS(evolve<double>(field, z0, prompts, 0), ConfigError);
}

TEST_CASE("beam recovery") {
  Rng rng(2);
  Eigen::RowVectorXd latent(16);
  for (auto& v : latent) v = rng.normal();
  const BeamVector w = recover_beam(latent);
  REQUIRE(w.size() == 8);
  for (const auto& v : w) CHECK(std::abs(v) == doctest::Approx(1.0 / std::sqrt(8.0)));

  // The amplitude half only enters through a positive scale of every entry.
  Eigen::RowVectorXd scaled = latent;
  scaled.rightCols(8) *= 3.0;
  CHECK((recover_beam(scaled) - w).norm() < 1e-12);

  // phase_only(idft(amp * e^{j phase})) reference.
  ComplexVector spec(8);
  for (int k = 0; k < 8; ++k) spec[k] = latent[8 + k] * std::polar(1.0, latent[k]);
  CHECK((phase_only_beam(idft(spec)) - w).norm() < 1e-12);

  CHECK_THROWS_AS(recover_beam(Eigen::RowVectorXd::Zero(7)), DimensionError);
}

TEST_CASE("candidate priors are nested and user specific") {
  const Latent<float> a = candidate_prior(11, 3, 0, 16);
  CHECK(a.rows() == 1);
  CHECK(a.cols() == 16);
  CHECK(a == candidate_prior(11, 3, 0, 16));
  CHECK(a != candidate_prior(11, 3, 1, 16));
  CHECK(a != candidate_prior(11, 4, 0, 16));
  CHECK(a != candidate_prior(12, 3, 0, 16));
}

TEST_CASE("brainstormed candidates") {
  const Checkpoint ckpt = random_checkpoint();
  const BeamGenerator gen(ckpt, true);
  Rng rng(3);
  const ComplexVector h = random_channel(8, rng);
  const Prompt prompt = full_prompt(h);
  const auto four = gen.brainstorm(prompt, 4, 1, 11, 7);
  const auto eight = gen.brainstorm(prompt, 8, 1, 11, 7);
  REQUIRE(four.size() == 4);
  REQUIRE(eight.size() == 8);
  for (int i = 0; i < 4; ++i) CHECK((four[i] - eight[i]).norm() < 1e-6);
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j) CHECK((eight[i] - eight[j]).norm() > 1e-6);
  for (const auto& w : eight) CHECK(w.norm() == doctest::Approx(1.0));

  // Batched generation matches one prompt at a time.
  const std::vector<Prompt> prompts{prompt, full_prompt(random_channel(8, rng))};
  Latent<float> priors(3, 16);
  priors.row(0) = candidate_prior(11, 7, 0, 16);
  priors.row(1) = candidate_prior(11, 9, 0, 16);
  priors.row(2) = candidate_prior(11, 7, 1, 16);
  const std::vector<int> rows{0, 1, 0};
  const auto batched = gen.generate(prompts, rows, priors, 1);
  CHECK((batched[0] - four[0]).norm() < 1e-5);
  CHECK((batched[2] - four[1]).norm() < 1e-5);

  Checkpoint disc = ckpt;
  disc.config.n_blocks = 0;
  CHECK_THROWS_AS(BeamGenerator(disc, true), ConfigError);
}

TEST_CASE("noiseless selection is the candidate argmax") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const ComplexVector h = random_channel(8, rng);
    std::vector<BeamVector> cands;
    for (int i = 0; i < 6; ++i) {
      ComplexVector v = random_channel(8, rng);
      cands.push_back(phase_only_beam(v));
    }
    Rng sel(0);
    const Selection s = select_beam(h, cands, std::nullopt, sel);
    int best = 0;
    for (int i = 1; i < 6; ++i)
      if (beam_gain(h, cands[i]) > beam_gain(h, cands[best])) best = i;
    CHECK(s.index == best);

    // Adding candidates never lowers the selected gain.
    std::vector<BeamVector> more = cands;
    more.push_back(phase_only_beam(random_channel(8, rng)));
    CHECK(beam_gain(h, select_beam(h, more, std::nullopt, sel).beam) >= beam_gain(h, s.beam));

    // An MRT-phase candidate always wins for a constant-modulus set.
    more.push_back(phase_only_beam(h));
    CHECK(select_beam(h, more, std::nullopt, sel).index == static_cast<int>(more.size()) - 1);
  }
  const ComplexVector h = random_channel(8, rng);
  std::vector<BeamVector> one{phase_only_beam(random_channel(8, rng))};
  Rng sel(0);
  CHECK(select_beam(h, one, 10.0, sel).index == 0);

  std::vector<BeamVector> ties{one[0], one[0]};
  CHECK(select_beam(h, ties, std::nullopt, sel).index == 0);
}

TEST_CASE("inference config validation") {
  InferenceConfig cfg;
  CHECK_NOTHROW(cfg.validate(32));
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(32), ConfigError);
  cfg = InferenceConfig{};
  cfg.probe_budget = 33;
  CHECK_THROWS_AS(cfg.validate(32), ConfigError);
  cfg = InferenceConfig{};
  cfg.brainstorm = 0;
  CHECK_THROWS_AS(cfg.validate(32), ConfigError);
}
