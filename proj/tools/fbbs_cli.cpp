// Command-line front end: dataset generation, training, inference and the
// evaluation sweeps.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbbs/baselines.hpp"
#include "fbbs/config.hpp"
#include "fbbs/errors.hpp"
#include "fbbs/evalharness.hpp"
#include "fbbs/selftest.hpp"
#include "fbbs/training.hpp"

namespace fs = std::filesystem;
using namespace fbbs;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

AppConfig load(const Options& opt) {
  AppConfig cfg = opt.config_path.empty() ? parse_config_text("", opt.overrides) : parse_config(opt.config_path, opt.overrides);
  cfg.validate();
  return cfg;
}

std::string out_or(const Options& opt, const std::string& fallback) { return opt.out.empty() ? fallback : opt.out; }

Dataset load_data(const AppConfig& cfg) {
  if (!fs::exists(cfg.paths.dataset)) throw ConfigError("dataset file not found: " + cfg.paths.dataset);
  Dataset ds = load_dataset(cfg.paths.dataset);
  if (ds.n_antennas() != cfg.site.n_antennas) throw ConfigError("dataset N_t does not match n_antennas");
  return ds;
}

Checkpoint load_ckpt(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint file not found: " + path);
  return load_checkpoint(path);
}

void write_manifest(const std::string& csv_path, std::string_view verb, const AppConfig& cfg,
                    const std::vector<std::string>& artifacts) {
  nlohmann::ordered_json j;
  j["verb"] = verb;
  j["csv"] = fs::path(csv_path).filename().string();
  nlohmann::ordered_json config;
  std::istringstream lines(dump_config(cfg));
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find(" = ");
    config[line.substr(0, eq)] = line.substr(eq + 3);
  }
  j["config"] = config;
  nlohmann::ordered_json digests;
  for (const auto& a : artifacts) digests[fs::path(a).filename().string()] = file_digest(a);
  j["artifacts"] = digests;
  std::ofstream os(csv_path + ".manifest.json", std::ios::binary);
  os << j.dump(2) << '\n';
}

void emit(const std::string& path, std::span<const ResultRow> rows, std::string_view verb, const AppConfig& cfg,
          const std::vector<std::string>& artifacts) {
  write_csv(rows, path);
  write_manifest(path, verb, cfg, artifacts);
  std::cout << format_csv(rows);
}

int cmd_gen_data(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) cfg.data.seed = *opt.seed;
  const Site site = generate_site(cfg.site);
  const Dataset ds = build_dataset(site, cfg.data.n_users, cfg.data.train_fraction, cfg.data.seed);
  const std::string path = out_or(opt, cfg.paths.dataset);
  save_dataset(ds, path);
  std::cerr << "wrote " << ds.samples.size() << " users (" << ds.train_count << " train) to " << path << '\n';
  return 0;
}

int cmd_train(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) {
    cfg.train.seed = *opt.seed;
    cfg.discriminative.seed = *opt.seed;
  }
  const Dataset ds = load_data(cfg);
  if (cfg.train_method == "discriminative") {
    for (int q : cfg.eval.sweep.budgets) {
      const std::string path = out_or(opt, cfg.paths.discriminative_prefix) + std::to_string(q) + ".ckpt";
      save_checkpoint(train_discriminative(ds, q, cfg.discriminative), path);
      std::cerr << "wrote " << path << '\n';
    }
    return 0;
  }
  const std::string path =
      out_or(opt, cfg.budget_regime == "dense" ? cfg.paths.dense_checkpoint : cfg.paths.checkpoint);
  const auto start = std::chrono::steady_clock::now();
  ModelConfig model = cfg.model;
  model.seq_len = ds.n_antennas();
  const TrainResult result = train(ds, model, cfg.effective_train(), [&](int epoch, int stage, double loss) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "epoch %d stage %d loss %.6f (%.0f s)\n", epoch, stage, loss, secs);
  });
  save_checkpoint(result.final, path);
  save_checkpoint(result.teacher, path + ".stage1");
  write_loss_csv(result.history, path + ".loss.csv");
  std::cerr << "wrote " << path << ", " << path << ".stage1 and " << path << ".loss.csv\n";
  return 0;
}

int cmd_infer(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) cfg.infer.seed = *opt.seed;
  const Dataset ds = load_data(cfg);
  const Checkpoint ckpt = load_ckpt(cfg.paths.checkpoint);
  EvalContext ctx{&ds, &ckpt, nullptr, {}, cfg.infer.use_ema, cfg.infer.selection_noise_snr_db, opt.threads};
  const int m = cfg.infer.brainstorm;
  const auto outcomes = run_generative(Method::Fbbs, ctx, cfg.infer.probe_budget, cfg.infer.steps, std::span(&m, 1),
                                       std::nullopt, std::min(cfg.eval.sweep.n_test_users, ds.test().size()),
                                       cfg.infer.seed);
  const std::string path = out_or(opt, "infer.csv");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << "user,q,m,steps,selected,gain_db";
  for (int n = 0; n < ds.n_antennas(); ++n) os << ",phase_" << n;
  os << '\n';
  char buf[64];
  for (const auto& o : outcomes.front()) {
    std::snprintf(buf, sizeof(buf), "%.6f", o.gain_db);
    os << o.user << ',' << cfg.infer.probe_budget << ',' << m << ',' << cfg.infer.steps << ',' << o.selected << ',' << buf;
    for (const auto& w : o.beam) {
      std::snprintf(buf, sizeof(buf), "%.6f", phase_of(w));
      os << ',' << buf;
    }
    os << '\n';
  }
  os.close();
  write_manifest(path, "infer", cfg, {cfg.paths.dataset, cfg.paths.checkpoint});
  std::cerr << "wrote " << outcomes.front().size() << " users to " << path << '\n';
  return 0;
}

/// Loads whatever checkpoints the listed methods need.
struct Loaded {
  Dataset dataset;
  std::optional<Checkpoint> fbbs, teacher;
  std::map<int, Checkpoint> discriminative;
  std::vector<std::string> artifacts;

  EvalContext context(const AppConfig& cfg, int threads) const {
    EvalContext ctx;
    ctx.dataset = &dataset;
    ctx.fbbs = fbbs ? &*fbbs : nullptr;
    ctx.teacher = teacher ? &*teacher : nullptr;
    for (const auto& [q, c] : discriminative) ctx.discriminative[q] = &c;
    ctx.use_ema = cfg.eval.use_ema;
    ctx.selection_noise_snr_db = cfg.eval.selection_noise_snr_db;
    ctx.threads = threads;
    return ctx;
  }
};

Loaded load_for(const AppConfig& cfg, const std::set<Method>& methods, std::span<const int> budgets) {
  Loaded l{load_data(cfg), {}, {}, {}, {cfg.paths.dataset}};
  if (methods.contains(Method::Fbbs)) {
    l.fbbs = load_ckpt(cfg.paths.checkpoint);
    l.artifacts.push_back(cfg.paths.checkpoint);
  }
  if (methods.contains(Method::FlowTeacher)) {
    l.teacher = load_ckpt(cfg.teacher_path());
    l.artifacts.push_back(cfg.teacher_path());
  }
  if (methods.contains(Method::Discriminative))
    for (int q : budgets) {
      const std::string path = cfg.paths.discriminative_prefix + std::to_string(q) + ".ckpt";
      l.discriminative.emplace(q, load_ckpt(path));
      l.artifacts.push_back(path);
    }
  return l;
}

std::set<Method> configured_methods(const AppConfig& cfg) {
  std::set<Method> out;
  for (const auto& name : cfg.eval.methods) out.insert(parse_method(name));
  return out;
}

int cmd_eval(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) cfg.eval.sweep.seed = *opt.seed;
  const auto methods = configured_methods(cfg);
  const Loaded l = load_for(cfg, methods, cfg.eval.sweep.budgets);
  const EvalContext ctx = l.context(cfg, opt.threads);
  std::vector<ResultRow> rows;
  for (Method m : methods)
    for (auto& r : eval_method(m, ctx, cfg.eval.sweep)) rows.push_back(std::move(r));
  emit(out_or(opt, "eval.csv"), rows, "eval", cfg, l.artifacts);
  return 0;
}

int cmd_sweep_overhead(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) cfg.eval.sweep.seed = *opt.seed;
  auto methods = configured_methods(cfg);
  methods.insert(Method::Fbbs);
  methods.insert(Method::Exhaustive);
  const Loaded l = load_for(cfg, methods, cfg.eval.sweep.budgets);
  const EvalContext ctx = l.context(cfg, opt.threads);
  std::vector<ResultRow> rows;
  for (Method m : methods) {
    SweepSpec spec = cfg.eval.sweep;
    if (m == Method::Exhaustive) {
      // Exhaustive search at every budget and every generative total overhead.
      std::set<int> qs(spec.budgets.begin(), spec.budgets.end());
      for (int q : spec.budgets)
        for (int b : spec.brainstorms)
          if (q + b <= cfg.site.n_antennas) qs.insert(q + b);
      spec.budgets.assign(qs.begin(), qs.end());
    }
    for (auto& r : eval_method(m, ctx, spec)) rows.push_back(std::move(r));
  }
  emit(out_or(opt, "sweep_overhead.csv"), rows, "sweep-overhead", cfg, l.artifacts);
  return 0;
}

int cmd_sweep_steps(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) cfg.eval.sweep.seed = *opt.seed;
  const std::set<Method> methods{Method::Fbbs, Method::FlowTeacher};
  const Loaded l = load_for(cfg, methods, {});
  const EvalContext ctx = l.context(cfg, opt.threads);
  std::vector<ResultRow> rows;
  for (Method m : methods)
    for (auto& r : eval_method(m, ctx, cfg.eval.sweep)) rows.push_back(std::move(r));
  emit(out_or(opt, "sweep_steps.csv"), rows, "sweep-steps", cfg, l.artifacts);
  return 0;
}

int cmd_eval_noise(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) cfg.eval.sweep.seed = *opt.seed;
  const Loaded l = load_for(cfg, {Method::Fbbs}, {});
  std::vector<double> grid = cfg.eval.noise_grid;
  std::vector<ResultRow> rows =
      eval_noisy_prompts(*l.fbbs, l.dataset, grid, cfg.infer.probe_budget, cfg.infer.brainstorm, cfg.infer.steps,
                         cfg.eval.sweep.n_test_users, cfg.eval.sweep.seed, opt.threads);
  SweepSpec noiseless = cfg.eval.sweep;
  noiseless.budgets = {cfg.infer.probe_budget};
  noiseless.brainstorms = {cfg.infer.brainstorm};
  noiseless.steps = {cfg.infer.steps};
  noiseless.snr_db = {std::nullopt};
  for (auto& r : eval_method(Method::Fbbs, l.context(cfg, opt.threads), noiseless)) rows.push_back(std::move(r));
  emit(out_or(opt, "eval_noise.csv"), rows, "eval-noise", cfg, l.artifacts);
  return 0;
}

int cmd_eval_budgets(const Options& opt) {
  AppConfig cfg = load(opt);
  if (opt.seed) cfg.eval.sweep.seed = *opt.seed;
  const Dataset ds = load_data(cfg);
  const Checkpoint sparse = load_ckpt(cfg.paths.checkpoint);
  const Checkpoint dense = load_ckpt(cfg.paths.dense_checkpoint);
  SweepSpec spec = cfg.eval.sweep;
  spec.budgets = cfg.eval.budget_grid;
  const auto rows = sweep_budget_generalization(sparse, dense, ds, spec, opt.threads);
  const std::string base = out_or(opt, "eval_budgets.csv");
  const fs::path stem = fs::path(base).replace_extension();
  for (const char* label : {"sparse", "dense"}) {
    std::vector<ResultRow> part;
    for (const auto& r : rows)
      if (r.label == label) part.push_back(r);
    emit(stem.string() + "_" + label + ".csv", part, "eval-budgets", cfg,
         {cfg.paths.dataset, cfg.paths.checkpoint, cfg.paths.dense_checkpoint});
  }
  return 0;
}

int cmd_selftest(const Options&) {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  for (const auto& r : run_selftest()) {
    std::printf("%s  %-40s error %.3g (tolerance %.3g)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.error,
                r.tolerance);
    ok = ok && r.passed;
  }
  std::printf("selftest %s in %.1f s\n", ok ? "passed" : "FAILED",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-step generative site-specific beamforming"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config_path, "configuration file (key = value lines)");
  app.add_option("--set", opt.overrides, "override KEY=VALUE, applied after the file")->take_all()->allow_extra_args(false);
  app.add_option("--out", opt.out, "output path");
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { opt.seed = s; }, "seed for the command");
  app.add_option("--threads", opt.threads, "worker threads for evaluation")->check(CLI::PositiveNumber);

  const std::vector<std::pair<std::string, std::function<int(const Options&)>>> verbs = {
      {"gen-data", cmd_gen_data},           {"train", cmd_train},
      {"infer", cmd_infer},                 {"eval", cmd_eval},
      {"sweep-overhead", cmd_sweep_overhead}, {"sweep-steps", cmd_sweep_steps},
      {"eval-noise", cmd_eval_noise},       {"eval-budgets", cmd_eval_budgets},
      {"selftest", cmd_selftest},
  };
  std::function<int(const Options&)> run;
  for (const auto& [name, fn] : verbs) {
    auto* sub = app.add_subcommand(name);
    sub->fallthrough();
    sub->callback([&run, fn = fn] { run = fn; });
  }
  CLI11_PARSE(app, argc, argv);
  try {
    return run(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
