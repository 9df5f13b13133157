#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fbbs/baselines.hpp"
#include "fbbs/checkpoint.hpp"
#include "fbbs/inference.hpp"
#include "fbbs/sitegen.hpp"

namespace fbbs {

enum class Method { Fbbs, FlowTeacher, Exhaustive, Discriminative, Mrt };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct SweepSpec {
  std::vector<int> budgets{16};
  std::vector<int> brainstorms{8};
  std::vector<int> steps{1};
  /// nullopt entries are noiseless prompts.
  std::vector<std::optional<double>> snr_db{std::nullopt};
  std::size_t n_test_users = 500;
  std::uint64_t seed = 11;

  void validate(std::size_t test_size, int q_max) const;
};

struct ResultRow {
  Method method = Method::Fbbs;
  int q = 0;
  int m = 0;
  int steps = 0;
  std::optional<double> snr_db;
  int overhead = 0;
  double mean_gain_db = 0.0;
  double p10_gain_db = 0.0;
  std::size_t n_users = 0;
  std::uint64_t seed = 0;
  /// Free-form tag (e.g. which training regime produced the checkpoint).
  std::string label;
  /// Per-user gains in test-split order; paired across rows of one sweep.
  std::vector<double> gains;
};

/// Checkpoints and options shared by every row of a sweep.
struct EvalContext {
  const Dataset* dataset = nullptr;
  const Checkpoint* fbbs = nullptr;
  const Checkpoint* teacher = nullptr;
  std::map<int, const Checkpoint*> discriminative;  // keyed by budget
  bool use_ema = true;
  /// Noise on the M selection probes; nullopt keeps selection noiseless.
  std::optional<double> selection_noise_snr_db;
  int threads = 1;
};

/// Mean over users with compensated summation.
double mean_gain(std::span<const double> gains);
/// 10th percentile with linear interpolation between order statistics.
double p10_gain(std::span<const double> gains);

/// Per-user selection for one generative configuration.
struct UserOutcome {
  std::size_t user = 0;  // index into the test split
  int selected = 0;
  BeamVector beam;
  double gain_db = 0.0;
};

/// Runs the generative pipeline for budget q, steps and prompt SNR, with the
/// largest M in `brainstorms` generated once; result[i] holds the outcomes
/// for brainstorms[i] (prefix-nested candidates).
std::vector<std::vector<UserOutcome>> run_generative(Method method, const EvalContext& ctx, int q, int steps,
                                                     std::span<const int> brainstorms, std::optional<double> snr_db,
                                                     std::size_t n_users, std::uint64_t seed);

std::vector<ResultRow> eval_method(Method method, const EvalContext& ctx, const SweepSpec& spec);

/// Both checkpoints over every budget in `spec.budgets`, rows labelled
/// "sparse" and "dense".
std::vector<ResultRow> sweep_budget_generalization(const Checkpoint& sparse, const Checkpoint& dense, const Dataset& dataset,
                                                   const SweepSpec& spec, int threads = 1);

std::vector<ResultRow> eval_noisy_prompts(const Checkpoint& ckpt, const Dataset& dataset, std::span<const double> snr_grid,
                                          int q, int m, int steps, std::size_t n_users, std::uint64_t seed,
                                          int threads = 1);

inline constexpr std::string_view kCsvHeader = "method,q,m,steps,snr_db,overhead,mean_gain_db,p10_gain_db,n_users,seed";

std::string format_csv(std::span<const ResultRow> rows);
void write_csv(std::span<const ResultRow> rows, const std::filesystem::path& path);

struct BootstrapInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Percentile bootstrap interval for the mean of paired differences.
BootstrapInterval bootstrap_mean(std::span<const double> values, double level = 0.95, int resamples = 2000,
                                 std::uint64_t seed = 5);

/// Element-wise a - b of two paired gain vectors.
std::vector<double> paired_difference(std::span<const double> a, std::span<const double> b);

}  // namespace fbbs
