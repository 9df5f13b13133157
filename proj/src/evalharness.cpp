#include "fbbs/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "fbbs/errors.hpp"

namespace fbbs {

namespace {

constexpr std::uint64_t kPromptStream = 0x9b0e;
constexpr std::uint64_t kSelectStream = 0x5e1e;
constexpr std::size_t kUsersPerChunk = 16;

/// Calls f(chunk) for every chunk index on up to `threads` workers. Results
/// must be written by index so the outcome does not depend on scheduling.
template <typename F>
void for_each_chunk(std::size_t n_chunks, int threads, F&& f) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), n_chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) f(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t c; (c = next++) < n_chunks;) {
          try {
            f(c);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
}

double checked_gain(const ComplexVector& h, const BeamVector& w) {
  const double g = normalized_gain_db(h, w);
  if (!(g <= 1e-9)) throw Error("normalized gain above the MRT bound: " + std::to_string(g) + " dB");
  return g;
}

Prompt user_prompt(const ComplexVector& h, const Codebook& cb, int q, std::optional<double> snr_db, std::uint64_t seed,
                   std::size_t user) {
  Rng rng = Rng(seed, kPromptStream).split(user);
  const Eigen::VectorXd rsrp = measure_rsrp(h, cb, snr_db, rng);
  return make_prompt(rsrp, uniform_probe_indices(q, cb.n_beams()));
}

double quantile(std::vector<double> values, double level) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = level * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ResultRow make_row(Method method, int q, int m, int steps, std::optional<double> snr, int overhead, std::uint64_t seed,
                   std::vector<double> gains) {
  ResultRow row;
  row.method = method;
  row.q = q;
  row.m = m;
  row.steps = steps;
  row.snr_db = snr;
  row.overhead = overhead;
  row.mean_gain_db = mean_gain(gains);
  row.p10_gain_db = p10_gain(gains);
  row.n_users = gains.size();
  row.seed = seed;
  row.gains = std::move(gains);
  return row;
}

std::size_t chunk_count(std::size_t n) { return (n + kUsersPerChunk - 1) / kUsersPerChunk; }

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Fbbs: return "fbbs";
    case Method::FlowTeacher: return "flow_teacher";
    case Method::Exhaustive: return "exhaustive";
    case Method::Discriminative: return "discriminative";
    case Method::Mrt: return "mrt";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::Fbbs, Method::FlowTeacher, Method::Exhaustive, Method::Discriminative, Method::Mrt})
    if (method_name(m) == name) return m;
  throw ConfigError("unknown method " + std::string(name));
}

void SweepSpec::validate(std::size_t test_size, int q_max) const {
  if (budgets.empty() || brainstorms.empty() || steps.empty() || snr_db.empty())
    throw ConfigError("sweep lists must be nonempty");
  for (int q : budgets)
    if (q < 1 || q > q_max) throw ConfigError("sweep budget outside [1, Q_max]");
  for (int m : brainstorms)
    if (m < 1) throw ConfigError("brainstorm numbers must be at least 1");
  for (int t : steps)
    if (t < 1) throw ConfigError("step counts must be at least 1");
  if (n_test_users < 1 || n_test_users > test_size) throw ConfigError("n_test_users exceeds the test split");
}

double mean_gain(std::span<const double> gains) {
  if (gains.empty()) return 0.0;
  double sum = 0.0, carry = 0.0;
  for (double g : gains) {
    const double y = g - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(gains.size());
}

double p10_gain(std::span<const double> gains) { return quantile({gains.begin(), gains.end()}, 0.1); }

std::vector<std::vector<UserOutcome>> run_generative(Method method, const EvalContext& ctx, int q, int steps,
                                                     std::span<const int> brainstorms, std::optional<double> snr_db,
                                                     std::size_t n_users, std::uint64_t seed) {
  if (!ctx.dataset) throw ConfigError("evaluation needs a dataset");
  const Checkpoint* ckpt = method == Method::Fbbs ? ctx.fbbs : method == Method::FlowTeacher ? ctx.teacher : nullptr;
  if (!ckpt) throw ConfigError(std::string("missing checkpoint for method ") + std::string(method_name(method)));
  const auto test = ctx.dataset->test();
  if (n_users > test.size()) throw ConfigError("n_test_users exceeds the test split");
  if (brainstorms.empty()) throw ConfigError("no brainstorm numbers given");

  const int n_t = ctx.dataset->n_antennas();
  const Codebook cb = dft_codebook(ArrayGeometry{n_t, 0.5});
  const BeamGenerator generator(*ckpt, ctx.use_ema,
                                method == Method::Fbbs ? VelocityMode::Average : VelocityMode::Instantaneous);
  if (generator.n_antennas() != n_t) throw ConfigError("checkpoint N_t does not match the dataset");
  const int m_max = *std::max_element(brainstorms.begin(), brainstorms.end());
  const int width = 2 * n_t;

  std::vector<std::vector<UserOutcome>> out(brainstorms.size(), std::vector<UserOutcome>(n_users));
  for_each_chunk(chunk_count(n_users), ctx.threads, [&](std::size_t chunk) {
    const std::size_t begin = chunk * kUsersPerChunk;
    const std::size_t end = std::min(n_users, begin + kUsersPerChunk);
    std::vector<Prompt> prompts;
    std::vector<int> rows;
    Latent<float> priors((end - begin) * m_max, width);
    for (std::size_t u = begin; u < end; ++u) {
      prompts.push_back(user_prompt(test[u].channel.h, cb, q, snr_db, seed, u));
      for (int k = 0; k < m_max; ++k) {
        priors.row(rows.size()) = candidate_prior(seed, u, k, width);
        rows.push_back(static_cast<int>(u - begin));
      }
    }
    const std::vector<BeamVector> beams = generator.generate(prompts, rows, priors, steps);
    for (std::size_t u = begin; u < end; ++u) {
      const ComplexVector& h = test[u].channel.h;
      const std::span<const BeamVector> candidates(beams.data() + (u - begin) * m_max, m_max);
      for (std::size_t i = 0; i < brainstorms.size(); ++i) {
        Rng sel_rng = Rng(seed, kSelectStream).split(u);
        Selection s = select_beam(h, candidates.first(brainstorms[i]), ctx.selection_noise_snr_db, sel_rng);
        const double g = checked_gain(h, s.beam);
        out[i][u] = {u, s.index, std::move(s.beam), g};
      }
    }
  });
  return out;
}

std::vector<ResultRow> eval_method(Method method, const EvalContext& ctx, const SweepSpec& spec) {
  if (!ctx.dataset) throw ConfigError("evaluation needs a dataset");
  const int n_t = ctx.dataset->n_antennas();
  spec.validate(ctx.dataset->test().size(), n_t);
  const auto test = ctx.dataset->test();
  const std::size_t n = spec.n_test_users;
  std::vector<ResultRow> rows;

  switch (method) {
    case Method::Fbbs:
    case Method::FlowTeacher:
      for (const auto& snr : spec.snr_db)
        for (int q : spec.budgets)
          for (int t : spec.steps) {
            const auto outcomes = run_generative(method, ctx, q, t, spec.brainstorms, snr, n, spec.seed);
            for (std::size_t i = 0; i < spec.brainstorms.size(); ++i) {
              std::vector<double> gains;
              gains.reserve(n);
              for (const auto& o : outcomes[i]) gains.push_back(o.gain_db);
              const int m = spec.brainstorms[i];
              rows.push_back(make_row(method, q, m, t, snr, q + m, spec.seed, std::move(gains)));
            }
          }
      break;
    case Method::Exhaustive: {
      const Codebook cb = dft_codebook(ArrayGeometry{n_t, 0.5});
      for (const auto& snr : spec.snr_db)
        for (int q : spec.budgets) {
          std::vector<double> gains(n);
          for_each_chunk(chunk_count(n), ctx.threads, [&](std::size_t chunk) {
            for (std::size_t u = chunk * kUsersPerChunk; u < std::min(n, (chunk + 1) * kUsersPerChunk); ++u) {
              Rng rng = Rng(spec.seed, kPromptStream).split(u);
              gains[u] = checked_gain(test[u].channel.h, exhaustive_select(test[u].channel.h, cb, q, snr, rng));
            }
          });
          rows.push_back(make_row(method, q, 0, 0, snr, q, spec.seed, std::move(gains)));
        }
      break;
    }
    case Method::Discriminative: {
      const Codebook cb = dft_codebook(ArrayGeometry{n_t, 0.5});
      for (const auto& snr : spec.snr_db)
        for (int q : spec.budgets) {
          const auto it = ctx.discriminative.find(q);
          if (it == ctx.discriminative.end() || !it->second)
            throw ConfigError("missing discriminative checkpoint for budget " + std::to_string(q));
          const DiscriminativePredictor predictor(*it->second, ctx.use_ema);
          if (predictor.n_antennas() != n_t) throw ConfigError("checkpoint N_t does not match the dataset");
          std::vector<double> gains(n);
          for_each_chunk(chunk_count(n), ctx.threads, [&](std::size_t chunk) {
            const std::size_t begin = chunk * kUsersPerChunk;
            const std::size_t end = std::min(n, begin + kUsersPerChunk);
            std::vector<Prompt> prompts;
            for (std::size_t u = begin; u < end; ++u)
              prompts.push_back(user_prompt(test[u].channel.h, cb, q, snr, spec.seed, u));
            const auto z = predictor.predict(prompts);
            for (std::size_t u = begin; u < end; ++u)
              gains[u] = checked_gain(test[u].channel.h, recover_beam(z.row(u - begin).cast<double>()));
          });
          rows.push_back(make_row(method, q, 1, 1, snr, q + 1, spec.seed, std::move(gains)));
        }
      break;
    }
    case Method::Mrt: {
      std::vector<double> gains(n);
      for (std::size_t u = 0; u < n; ++u) gains[u] = checked_gain(test[u].channel.h, mrt_beamformer(test[u].channel.h));
      rows.push_back(make_row(method, 0, 0, 0, std::nullopt, 0, spec.seed, std::move(gains)));
      break;
    }
  }
  return rows;
}

std::vector<ResultRow> sweep_budget_generalization(const Checkpoint& sparse, const Checkpoint& dense, const Dataset& dataset,
                                                   const SweepSpec& spec, int threads) {
  std::vector<ResultRow> rows;
  for (const auto& [label, ckpt] : {std::pair{"sparse", &sparse}, std::pair{"dense", &dense}}) {
    EvalContext ctx;
    ctx.dataset = &dataset;
    ctx.fbbs = ckpt;
    ctx.threads = threads;
    for (auto& row : eval_method(Method::Fbbs, ctx, spec)) {
      row.label = label;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<ResultRow> eval_noisy_prompts(const Checkpoint& ckpt, const Dataset& dataset, std::span<const double> snr_grid,
                                          int q, int m, int steps, std::size_t n_users, std::uint64_t seed,
                                          int threads) {
  if (snr_grid.empty()) throw ConfigError("snr grid must be nonempty");
  SweepSpec spec;
  spec.budgets = {q};
  spec.brainstorms = {m};
  spec.steps = {steps};
  spec.snr_db.assign(snr_grid.begin(), snr_grid.end());
  spec.n_test_users = n_users;
  spec.seed = seed;
  EvalContext ctx;
  ctx.dataset = &dataset;
  ctx.fbbs = &ckpt;
  ctx.threads = threads;
  return eval_method(Method::Fbbs, ctx, spec);
}

std::string format_csv(std::span<const ResultRow> rows) {
  std::string out(kCsvHeader);
  out += '\n';
  char buf[256];
  for (const auto& r : rows) {
    char snr[32] = "";
    if (r.snr_db) std::snprintf(snr, sizeof(snr), "%g", *r.snr_db);
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%s,%d,%.6f,%.6f,%zu,%llu\n", std::string(method_name(r.method)).c_str(),
                  r.q, r.m, r.steps, snr, r.overhead, r.mean_gain_db, r.p10_gain_db, r.n_users,
                  static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

void write_csv(std::span<const ResultRow> rows, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
  os << format_csv(rows);
}

BootstrapInterval bootstrap_mean(std::span<const double> values, double level, int resamples, std::uint64_t seed) {
  if (values.empty()) throw ConfigError("bootstrap needs at least one value");
  if (!(level > 0.0 && level < 1.0) || resamples < 1) throw ConfigError("invalid bootstrap settings");
  Rng rng(seed, /*stream=*/0xb007);
  std::vector<double> means(resamples);
  std::vector<double> draw(values.size());
  for (int b = 0; b < resamples; ++b) {
    for (auto& d : draw) d = values[rng.below(values.size())];
    means[b] = mean_gain(draw);
  }
  const double tail = (1.0 - level) / 2.0;
  return {mean_gain(values), quantile(means, tail), quantile(means, 1.0 - tail)};
}

std::vector<double> paired_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("paired samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

}  // namespace fbbs
