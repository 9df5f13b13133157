#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "fbbs/errors.hpp"
#include "fbbs/evalharness.hpp"
#include "fbbs/training.hpp"

using namespace fbbs;

namespace {

const Dataset& small_dataset() {
  static const Dataset ds = [] {
    SiteConfig sc;
    sc.n_antennas = 8;
    return build_dataset(generate_site(sc), 200, 0.5, 9);
  }();
  return ds;
}

const Checkpoint& small_checkpoint() {
  static const Checkpoint ckpt = [] {
    ModelConfig mc;
    mc.embed_dim = 16;
    mc.n_blocks = 1;
    mc.n_heads = 2;
    mc.seq_len = 8;
    mc.cond_dim = 8;
    TrainConfig tc;
    tc.max_epochs = 2;
    tc.stage1_epochs = 1;
    tc.batch_size = 16;
    tc.budget_set = {2, 4, 8};
    return train(small_dataset(), mc, tc).final;
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("summary statistics") {
  const std::vector<double> g{-4.0, -1.0, -3.0, -2.0, 0.0};
  CHECK(mean_gain(g) == doctest::Approx(-2.0));
  CHECK(p10_gain(g) == doctest::Approx(-3.6));  // 0.4 of the way from -4 to -3
  const std::vector<double> one{-1.5};
  CHECK(p10_gain(one) == -1.5);

  std::vector<double> many(100001, 0.1);
  many[0] = 1e8;
  CHECK(mean_gain(many) == doctest::Approx((1e8 + 0.1 * 100000) / 100001.0).epsilon(1e-15));
}

TEST_CASE("bootstrap intervals") {
  Rng rng(1);
  std::vector<double> v(400);
  for (auto& x : v) x = 2.0 + rng.normal();
  const auto ci = bootstrap_mean(v);
  CHECK(ci.estimate == doctest::Approx(mean_gain(v)));
  CHECK(ci.lower < ci.estimate);
  CHECK(ci.upper > ci.estimate);
  // Roughly +-1.96 standard errors.
  CHECK((ci.upper - ci.lower) == doctest::Approx(2 * 1.96 / 20.0).epsilon(0.15));
  const auto same = bootstrap_mean(v);
  CHECK(same.lower == ci.lower);
  CHECK_THROWS_AS(bootstrap_mean({}), ConfigError);

  const std::vector<double> a{1, 2, 3}, b{0.5, 2.5, 3};
  CHECK(paired_difference(a, b) == std::vector<double>{0.5, -0.5, 0.0});
  CHECK_THROWS_AS(paired_difference(a, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("method names") {
  for (Method m : {Method::Fbbs, Method::FlowTeacher, Method::Exhaustive, Method::Discriminative, Method::Mrt})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("oracle"), ConfigError);
}

TEST_CASE("reference rows") {
  EvalContext ctx;
  ctx.dataset = &small_dataset();
  SweepSpec spec;
  spec.budgets = {8, 2};
  spec.n_test_users = 60;
  const auto mrt = eval_method(Method::Mrt, ctx, spec);
  REQUIRE(mrt.size() == 1);
  CHECK(mrt[0].mean_gain_db == 0.0);
  CHECK(mrt[0].overhead == 0);

  const auto ex = eval_method(Method::Exhaustive, ctx, spec);
  REQUIRE(ex.size() == 2);
  const Codebook cb = dft_codebook({8, 0.5});
  const auto test = small_dataset().test();
  for (std::size_t u = 0; u < 60; ++u) {
    double best = 0.0;
    for (int k = 0; k < 8; ++k) best = std::max(best, beam_gain(test[u].channel.h, cb.beam(k)));
    CHECK(ex[0].gains[u] == doctest::Approx(10 * std::log10(best / beam_gain(test[u].channel.h, mrt_beamformer(test[u].channel.h)))));
    CHECK(ex[1].gains[u] <= ex[0].gains[u] + 1e-12);
  }
  CHECK(ex[0].overhead == 8);
  CHECK(ex[1].steps == 0);
}

TEST_CASE("generative rows") {
  EvalContext ctx;
  ctx.dataset = &small_dataset();
  SweepSpec spec;
  spec.budgets = {4};
  spec.brainstorms = {1, 4};
  spec.steps = {1, 2};
  spec.n_test_users = 40;
  CHECK_THROWS_AS(eval_method(Method::Fbbs, ctx, spec), ConfigError);
  ctx.fbbs = &small_checkpoint();
  CHECK_THROWS_AS(eval_method(Method::FlowTeacher, ctx, spec), ConfigError);

  const auto rows = eval_method(Method::Fbbs, ctx, spec);
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.overhead == r.q + r.m);
    CHECK(r.n_users == 40);
    for (double g : r.gains) CHECK(g <= 1e-9);
  }
  // Prefix-nested candidates: M = 4 never loses to M = 1 for each user.
  for (std::size_t u = 0; u < 40; ++u) CHECK(rows[1].gains[u] >= rows[0].gains[u]);

  ctx.threads = 3;
  const auto threaded = eval_method(Method::Fbbs, ctx, spec);
  CHECK(format_csv(threaded) == format_csv(rows));

  // The noiseless row of a noise sweep reproduces the plain evaluation.
  spec.snr_db = {10.0, std::nullopt};
  spec.steps = {1};
  const auto noisy = eval_method(Method::Fbbs, ctx, spec);
  CHECK(noisy[2].gains == rows[0].gains);
  CHECK(noisy[0].gains != rows[0].gains);

  spec.n_test_users = 1000;
  CHECK_THROWS_AS(eval_method(Method::Fbbs, ctx, spec), ConfigError);
}

TEST_CASE("csv layout and determinism") {
  ResultRow r;
  r.method = Method::Exhaustive;
  r.q = 16;
  r.steps = 0;
  r.overhead = 16;
  r.mean_gain_db = -1.25;
  r.p10_gain_db = -3.5;
  r.n_users = 500;
  r.seed = 11;
  ResultRow noisy = r;
  noisy.snr_db = -5.0;
  const std::vector<ResultRow> rows{r, noisy};
  const std::string csv = format_csv(rows);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == kCsvHeader);
  std::getline(is, line);
  CHECK(line == "exhaustive,16,0,0,,16,-1.250000,-3.500000,500,11");
  std::getline(is, line);
  CHECK(line == "exhaustive,16,0,0,-5,16,-1.250000,-3.500000,500,11");

  const auto path = std::filesystem::temp_directory_path() / "fbbs_test_rows.csv";
  write_csv(rows, path);
  std::ifstream f(path, std::ios::binary);
  std::stringstream content;
  content << f.rdbuf();
  CHECK(content.str() == csv);
  std::filesystem::remove(path);
}

TEST_CASE("budget generalization labels") {
  SweepSpec spec;
  spec.budgets = {2, 8};
  spec.brainstorms = {2};
  spec.n_test_users = 20;
  const auto rows = sweep_budget_generalization(small_checkpoint(), small_checkpoint(), small_dataset(), spec);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].label == "sparse");
  CHECK(rows[3].label == "dense");
  CHECK(rows[0].gains == rows[2].gains);
}
