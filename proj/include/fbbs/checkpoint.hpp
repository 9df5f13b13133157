#pragma once

#include <filesystem>

#include "fbbs/params.hpp"
#include "fbbs/velocity_model.hpp"

namespace fbbs {

/// Contents of an FBBSCKPT file. Raw parameters and their EMA shadow are
/// stored as single-precision tensors; the shadow names carry ".ema".
struct Checkpoint {
  ModelConfig config;
  PromptNormalization normalization;
  double amp_scale = 1.0;
  ParameterSet<float> raw;
  ParameterSet<float> ema;

  /// Discriminative baselines are tagged with n_blocks == 0.
  [[nodiscard]] bool is_discriminative() const { return config.n_blocks == 0; }
  [[nodiscard]] const ParameterSet<float>& weights(bool use_ema) const { return use_ema && ema.size() ? ema : raw; }
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace fbbs
