#include <cmath>

#include <doctest.h>

#include "fbbs/errors.hpp"
#include "fbbs/training.hpp"
#include "fbbs/velocity_model.hpp"

using namespace fbbs;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.seq_len = 8;
  cfg.cond_dim = 8;
  return cfg;
}

template <typename Scalar>
ParameterSet<Scalar> random_parameters(const ModelConfig& cfg, Rng& rng, double scale = 0.2) {
  ParameterSet<Scalar> p = init_parameters<Scalar>(cfg, 1);
  for (auto& t : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(scale * rng.normal());
  return p;
}

std::vector<Prompt> prompts_for(int batch, int q_max, Rng& rng) {
  std::vector<Prompt> out;
  for (int b = 0; b < batch; ++b) {
    Eigen::VectorXd c = Eigen::VectorXd::NullaryExpr(q_max, [&] { return std::exp(rng.normal()); });
    out.push_back(make_prompt(c, uniform_probe_indices(1 + int(rng.below(q_max)), q_max)));
  }
  return out;
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.n_heads = 16;  // head width 1 cannot be rotated
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.cond_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("sinusoidal embedding layout") {
  const Eigen::RowVectorXd e = sinusoidal_embedding(0.0, 8);
  CHECK(e.head(4).isZero());
  CHECK(e.tail(4).isOnes());
  const Eigen::RowVectorXd f = sinusoidal_embedding(3.0, 8);
  CHECK(f[0] == doctest::Approx(std::sin(3.0)));
  CHECK(f[4] == doctest::Approx(std::cos(3.0)));
  CHECK(f[1] == doctest::Approx(std::sin(3.0 * std::pow(10000.0, -0.25))));
}

TEST_CASE("latent and token layouts are inverse permutations") {
  Rng rng(1);
  Latent<double> x(3, 16);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const auto tokens = latent_to_tokens<double>(x, 2, 8);
  CHECK(tokens(8 + 3, 1) == x(1, 8 + 3));
  CHECK(tokens_to_latent<double>(tokens, 2, 8) == x);
}

TEST_CASE("fresh model outputs exactly zero") {
  const ModelConfig cfg = small_config();
  const VelocityModel<float> model(cfg, init_parameters<float>(cfg, 3));
  Rng rng(2);
  const auto x = standard_normal<float>(4, 16, rng);
  const std::vector<double> r{0, 0.1, 0.5, 1}, t{0.2, 0.1, 0.9, 1};
  const auto out = model.predict(x, r, t, encode_prompts<float>(prompts_for(4, 8, rng), {}));
  CHECK(out.rows() == 4);
  CHECK(out.cols() == 16);
  CHECK(out.isZero(0.0f));
}

TEST_CASE("parameter naming and zero-initialized projections") {
  const ModelConfig cfg = small_config();
  const auto p = init_parameters<double>(cfg, 5);
  CHECK(p.at("blocks.0.adaln.weight").rows() == 16);
  CHECK(p.at("blocks.0.adaln.weight").cols() == 6 * 16);
  CHECK(p.at("blocks.1.adaln.weight").isZero());
  CHECK(p.at("final.adaln.weight").cols() == 2 * 16);
  CHECK(p.at("head.weight").isZero());
  CHECK(p.at("head.weight").cols() == 2);
  CHECK(!p.at("input.weight").isZero());
  CHECK(p.at("blocks.0.ffn.in.weight").cols() == 32);
  CHECK_THROWS_AS((void)p.index("missing"), ConfigError);

  auto wrong = p;
  wrong.tensors[0] = ad::Matrix<double>::Zero(3, 3);
  CHECK_THROWS_AS(VelocityModel<double>(cfg, wrong), DimensionError);
  auto shorter = p;
  shorter.tensors.pop_back();
  shorter.names.pop_back();
  CHECK_THROWS_AS(VelocityModel<double>(cfg, shorter), ConfigError);
}

TEST_CASE("batch rows are evaluated independently") {
  const ModelConfig cfg = small_config();
  Rng rng(4);
  const VelocityModel<double> model(cfg, random_parameters<double>(cfg, rng));
  const auto prompts = prompts_for(3, 8, rng);
  const auto x = standard_normal<double>(3, 16, rng);
  const std::vector<double> r{0.1, 0.2, 0.3}, t{0.4, 0.5, 0.6};
  const auto all = model.predict(x, r, t, encode_prompts<double>(prompts, {}));
  for (int b = 0; b < 3; ++b) {
    const auto one = model.predict(x.row(b), std::span(&r[b], 1), std::span(&t[b], 1),
                                   encode_prompts<double>(std::span(&prompts[b], 1), {}));
    CHECK((one - all.row(b)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("output depends on the interval, the prompt and the state") {
  const ModelConfig cfg = small_config();
  Rng rng(5);
  const VelocityModel<double> model(cfg, random_parameters<double>(cfg, rng));
  const auto prompts = encode_prompts<double>(prompts_for(1, 8, rng), {});
  const auto other = encode_prompts<double>(prompts_for(1, 8, rng), {});
  const auto x = standard_normal<double>(1, 16, rng);
  const std::vector<double> r{0.2}, t{0.7}, t2{0.9};
  const auto base = model.predict(x, r, t, prompts);
  CHECK((model.predict(x, r, t2, prompts) - base).norm() > 1e-6);
  CHECK((model.predict(x, r, t, other) - base).norm() > 1e-6);
  CHECK((model.predict(x * 2.0, r, t, prompts) - base).norm() > 1e-6);
}

TEST_CASE("masked prompt values never reach the output") {
  ModelConfig cfg = small_config();
  Rng rng(6);
  const VelocityModel<float> model(cfg, random_parameters<float>(cfg, rng));
  for (int trial = 0; trial < 100; ++trial) {
    auto prompts = prompts_for(1, 8, rng);
    const auto x = standard_normal<float>(1, 16, rng);
    const std::vector<double> r{rng.uniform()}, t{1.0};
    const auto a = model.predict(x, r, t, encode_prompts<float>(prompts, {0.0, 3.0}));
    for (Eigen::Index i = 0; i < 8; ++i)
      if (!prompts[0].mask[i]) prompts[0].values[i] = 1e6 * rng.uniform();
    const auto b = model.predict(x, r, t, encode_prompts<float>(prompts, {0.0, 3.0}));
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-6f * a.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("prompt encoding") {
  const PromptNormalization norm{-10.0, 5.0};
  CHECK(norm.feature(1.0) == doctest::Approx((10 * std::log10(1.0 + 1e-12) + 10.0) / 5.0));
  Eigen::VectorXd c = Eigen::VectorXd::Constant(4, 0.1);
  const Prompt p = make_prompt(c, std::vector<int>{0, 2});
  const auto batch = encode_prompts<double>(std::span(&p, 1), norm);
  CHECK(batch.mask(0, 0) == 1.0);
  CHECK(batch.mask(0, 1) == 0.0);
  CHECK(batch.features(0, 1) == 0.0);
  CHECK(batch.features(0, 2) == doctest::Approx(0.0).epsilon(1e-9));
  Prompt empty = p;
  empty.mask.setConstant(false);
  CHECK_THROWS_AS(encode_prompts<double>(std::span(&empty, 1), norm), EmptyMask);
}

TEST_CASE("single and double precision agree") {
  const ModelConfig cfg = small_config();
  Rng rng(7);
  const auto pd = random_parameters<double>(cfg, rng, 0.1);
  const VelocityModel<double> md(cfg, pd);
  const VelocityModel<float> mf(cfg, pd.cast<float>());
  const auto prompts = prompts_for(2, 8, rng);
  const auto x = standard_normal<double>(2, 16, rng);
  const std::vector<double> r{0.0, 0.3}, t{1.0, 0.8};
  const auto a = md.predict(x, r, t, encode_prompts<double>(prompts, {}));
  const auto b = mf.predict(x.cast<float>(), r, t, encode_prompts<float>(prompts, {}));
  CHECK((a - b.cast<double>()).cwiseAbs().maxCoeff() < 1e-4 * std::max(1.0, a.cwiseAbs().maxCoeff()));
}
