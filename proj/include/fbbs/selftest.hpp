#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fbbs {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst observed error (or 0/1 for exact set checks).
  double error = 0.0;
  double tolerance = 0.0;
};

/// Analytic-oracle invariant suite: transforms, steering vectors, beam
/// recovery, split identity, exact interval updates, gradients, AdamW,
/// probe index sets and prompt-mask invariance.
std::vector<CheckResult> run_selftest(std::uint64_t seed = 2024);

}  // namespace fbbs
