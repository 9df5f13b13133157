#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fbbs/baselines.hpp"
#include "fbbs/evalharness.hpp"
#include "fbbs/inference.hpp"
#include "fbbs/sitegen.hpp"
#include "fbbs/training.hpp"
#include "fbbs/velocity_model.hpp"

namespace fbbs {

struct DataConfig {
  std::size_t n_users = 10000;
  double train_fraction = 0.8;
  std::uint64_t seed = 3;
};

struct EvalConfig {
  SweepSpec sweep;
  std::vector<std::string> methods{"fbbs", "exhaustive", "mrt"};
  bool use_ema = true;
  std::optional<double> selection_noise_snr_db;
  std::vector<double> noise_grid{-5, 0, 5, 10, 15, 20, 25};
  std::vector<int> budget_grid{8, 12, 16, 24, 32};
};

struct PathsConfig {
  std::string dataset = "dataset.bin";
  std::string checkpoint = "fbbs.ckpt";
  /// Stage-I snapshot; empty means "<checkpoint>.stage1".
  std::string teacher;
  std::string dense_checkpoint = "fbbs_dense.ckpt";
  /// Discriminative checkpoints are "<prefix><Q>.ckpt".
  std::string discriminative_prefix = "disc_q";
};

struct AppConfig {
  SiteConfig site;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  /// "fbbs" or "discriminative".
  std::string train_method = "fbbs";
  /// "sparse" trains on train.budget_set, "dense" on dense_budget_set.
  std::string budget_regime = "sparse";
  std::vector<int> dense_budget_set;
  InferenceConfig infer;
  EvalConfig eval;
  DiscriminativeConfig discriminative;
  PathsConfig paths;

  /// Checks every section; the model's sequence length follows n_antennas.
  void validate() const;
  /// Training settings with the budget set of the selected regime.
  [[nodiscard]] TrainConfig effective_train() const;
  [[nodiscard]] std::string teacher_path() const { return paths.teacher.empty() ? paths.checkpoint + ".stage1" : paths.teacher; }
};

/// Applies one `key = value` setting; unknown keys and malformed values throw
/// ConfigError naming the key.
void apply_setting(AppConfig& cfg, std::string_view key, std::string_view value);

/// `key = value` lines with `#` comments, then `overrides` (each KEY=VALUE).
AppConfig parse_config_text(std::string_view text, std::span<const std::string> overrides = {});
AppConfig parse_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Every known key with its current value, one `key = value` line each.
std::string dump_config(const AppConfig& cfg);

}  // namespace fbbs
