#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fbbs/autodiff.hpp"
#include "fbbs/errors.hpp"

namespace fbbs {

/// Ordered collection of named dense tensors (rank <= 2, stored as matrices).
template <typename Scalar>
struct ParameterSet {
  using Mat = ad::Matrix<Scalar>;

  std::vector<std::string> names;
  std::vector<Mat> tensors;

  std::size_t add(std::string name, Mat value) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(value));
    return tensors.size() - 1;
  }

  [[nodiscard]] std::size_t size() const { return tensors.size(); }

  [[nodiscard]] std::size_t index(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw ConfigError("unknown parameter " + std::string(name));
  }

  Mat& at(std::string_view name) { return tensors[index(name)]; }
  [[nodiscard]] const Mat& at(std::string_view name) const { return tensors[index(name)]; }

  [[nodiscard]] std::size_t n_values() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
    return n;
  }

  [[nodiscard]] ParameterSet zeros_like() const {
    ParameterSet out;
    out.names = names;
    for (const auto& t : tensors) out.tensors.push_back(Mat::Zero(t.rows(), t.cols()));
    return out;
  }

  template <typename To>
  [[nodiscard]] ParameterSet<To> cast() const {
    ParameterSet<To> out;
    out.names = names;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<To>());
    return out;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.allFinite()) return false;
    return true;
  }
};

}  // namespace fbbs
