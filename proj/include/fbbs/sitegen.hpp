#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "fbbs/rng.hpp"
#include "fbbs/signal.hpp"

namespace fbbs {

using Point = Eigen::Vector2d;

struct Area {
  double x_min = -50.0;
  double x_max = 50.0;
  double y_min = 5.0;
  double y_max = 105.0;

  [[nodiscard]] bool contains(const Point& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }
};

/// Synthetic ray-based deployment. The array sits at `bs_position` with its
/// broadside along +y; azimuth is measured from broadside towards +x.
struct SiteConfig {
  std::uint64_t seed = 1;
  int n_antennas = 32;
  int n_paths = 5;
  int n_scatterers = 12;
  Area area;
  Point bs_position = Point::Zero();
  double los_probability = 0.6;
  double pathloss_exponent = 2.0;
  /// Amplitude factor applied per scattered-path order (path l gets decay^l).
  double path_decay = 0.6;
  /// Reference distance normalising the two-hop distance product (meters).
  double scatter_ref_distance = 30.0;
  double spacing_ratio = 0.5;

  void validate() const;
  [[nodiscard]] ArrayGeometry geometry() const { return {n_antennas, spacing_ratio}; }
};

struct Site {
  SiteConfig config;
  std::vector<Point> scatterer_positions;
};

struct ChannelSample {
  Point ue_position = Point::Zero();
  ComplexVector h;
  bool is_los = false;
};

/// Angular-domain target: row 0 holds DFT phases, row 1 scaled magnitudes.
struct TargetSample {
  Eigen::VectorXd phase_row;
  Eigen::VectorXd amp_row;
};

struct DatasetRecord {
  ChannelSample channel;
  TargetSample target;
};

struct Dataset {
  Site site;
  std::vector<DatasetRecord> samples;  // training records first
  double amp_scale = 1.0;
  std::size_t train_count = 0;

  [[nodiscard]] int n_antennas() const { return site.config.n_antennas; }
  [[nodiscard]] std::span<const DatasetRecord> train() const { return {samples.data(), train_count}; }
  [[nodiscard]] std::span<const DatasetRecord> test() const {
    return {samples.data() + train_count, samples.size() - train_count};
  }
};

Site generate_site(const SiteConfig& config);

ChannelSample sample_channel(const Site& site, const Point& ue_position, Rng& rng);

TargetSample target_sample(const ComplexVector& h, double amp_scale);

Dataset build_dataset(const Site& site, std::size_t n_users, double train_fraction, std::uint64_t seed);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace fbbs
