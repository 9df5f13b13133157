#include "fbbs/sitegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "fbbs/binary_io.hpp"
#include "fbbs/errors.hpp"

namespace fbbs {

namespace {

constexpr std::string_view kDatasetMagic = "FBBSDATA";
constexpr std::uint32_t kDatasetVersion = 1;

// Azimuth of `to` seen from `from`, measured from the +y broadside.
double azimuth(const Point& from, const Point& to) {
  const Point d = to - from;
  return std::atan2(d.x(), d.y());
}

double distance(const Point& a, const Point& b) { return std::max((a - b).norm(), 1e-3); }

}  // namespace

void SiteConfig::validate() const {
  geometry().validate();
  if (n_paths < 1) throw ConfigError("n_paths must be at least 1");
  if (n_scatterers < n_paths - 1) throw ConfigError("n_scatterers must be at least n_paths - 1");
  if (!(area.x_max > area.x_min) || !(area.y_max > area.y_min)) throw ConfigError("degenerate site area");
  if (!(los_probability >= 0.0 && los_probability <= 1.0)) throw ConfigError("los_probability outside [0,1]");
  if (!(pathloss_exponent > 0.0)) throw ConfigError("pathloss_exponent must be positive");
  if (!(path_decay > 0.0)) throw ConfigError("path_decay must be positive");
  if (!(scatter_ref_distance > 0.0)) throw ConfigError("scatter_ref_distance must be positive");
}

Site generate_site(const SiteConfig& config) {
  config.validate();
  Site site{config, {}};
  Rng rng(config.seed, /*stream=*/0x5ca7);
  site.scatterer_positions.reserve(config.n_scatterers);
  for (int i = 0; i < config.n_scatterers; ++i) {
    const double x = rng.uniform(config.area.x_min, config.area.x_max);
    const double y = rng.uniform(config.area.y_min, config.area.y_max);
    site.scatterer_positions.emplace_back(x, y);
  }
  return site;
}

ChannelSample sample_channel(const Site& site, const Point& ue_position, Rng& rng) {
  const SiteConfig& cfg = site.config;
  if (!cfg.area.contains(ue_position)) throw ConfigError("UE position outside the site area");
  const ArrayGeometry geom = cfg.geometry();
  const int n_scattered = std::min<int>(cfg.n_paths - 1, static_cast<int>(site.scatterer_positions.size()));

  ChannelSample out;
  out.ue_position = ue_position;
  // Without scattered paths the direct path is the only one, so it is never blocked.
  const double los_draw = rng.uniform();
  out.is_los = n_scattered == 0 || los_draw < cfg.los_probability;
  out.h = ComplexVector::Zero(cfg.n_antennas);

  const double half_exp = 0.5 * cfg.pathloss_exponent;
  if (out.is_los) {
    const double gain = std::pow(distance(cfg.bs_position, ue_position), -half_exp);
    const double phase = rng.uniform(-std::numbers::pi, std::numbers::pi);
    out.h += std::polar(gain, phase) * steering_vector(azimuth(cfg.bs_position, ue_position), geom);
  }

  std::vector<int> order(site.scatterer_positions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return (site.scatterer_positions[a] - ue_position).squaredNorm() <
           (site.scatterer_positions[b] - ue_position).squaredNorm();
  });
  for (int l = 0; l < n_scattered; ++l) {
    const Point& s = site.scatterer_positions[order[l]];
    const double hop = distance(cfg.bs_position, s) * distance(s, ue_position) / cfg.scatter_ref_distance;
    const double gain = std::pow(cfg.path_decay, l + 1) * std::pow(hop, -half_exp);
    const double phase = rng.uniform(-std::numbers::pi, std::numbers::pi);
    out.h += std::polar(gain, phase) * steering_vector(azimuth(cfg.bs_position, s), geom);
  }
  return out;
}

TargetSample target_sample(const ComplexVector& h, double amp_scale) {
  if (!(amp_scale > 0.0)) throw ConfigError("amp_scale must be positive");
  const ComplexVector spectrum = dft(h);
  TargetSample t;
  t.phase_row.resize(spectrum.size());
  t.amp_row.resize(spectrum.size());
  for (Eigen::Index n = 0; n < spectrum.size(); ++n) {
    t.phase_row[n] = phase_of(spectrum[n]);
    t.amp_row[n] = std::abs(spectrum[n]) / amp_scale;
  }
  return t;
}

namespace {

double rms_spectrum(std::span<const DatasetRecord> records) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& r : records) {
    acc += dft(r.channel.h).squaredNorm();
    count += static_cast<std::size_t>(r.channel.h.size());
  }
  if (count == 0 || !(acc > 0.0)) throw ConfigError("training split has no channel energy");
  return std::sqrt(acc / static_cast<double>(count));
}

void fill_targets(Dataset& ds) {
  for (auto& r : ds.samples) r.target = target_sample(r.channel.h, ds.amp_scale);
}

}  // namespace

Dataset build_dataset(const Site& site, std::size_t n_users, double train_fraction, std::uint64_t seed) {
  if (n_users < 2) throw ConfigError("n_users must be at least 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0,1)");
  Dataset ds;
  ds.site = site;
  ds.train_count = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(train_fraction * n_users)), 1, n_users - 1);
  const Area& area = site.config.area;
  const Rng root(seed, /*stream=*/0xda7a);
  ds.samples.resize(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    Rng rng = root.split(u);
    const Point pos(rng.uniform(area.x_min, area.x_max), rng.uniform(area.y_min, area.y_max));
    ds.samples[u].channel = sample_channel(site, pos, rng);
  }
  ds.amp_scale = rms_spectrum(ds.train());
  fill_targets(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
  io::write_magic(os, kDatasetMagic);
  io::write_le<std::uint32_t>(os, kDatasetVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.n_antennas()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.site.config.n_paths));
  io::write_le<std::uint64_t>(os, ds.samples.size());
  io::write_le<double>(os, ds.amp_scale);
  io::write_le<std::uint64_t>(os, ds.train_count);
  for (const auto& r : ds.samples) {
    io::write_le<double>(os, r.channel.ue_position.x());
    io::write_le<double>(os, r.channel.ue_position.y());
    io::write_le<std::uint8_t>(os, r.channel.is_los ? 1 : 0);
    for (Eigen::Index n = 0; n < r.channel.h.size(); ++n) {
      io::write_le<double>(os, r.channel.h[n].real());
      io::write_le<double>(os, r.channel.h[n].imag());
    }
  }
  if (!os) throw ConfigError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset " + path.string());
  io::expect_magic(is, kDatasetMagic);
  if (io::read_le<std::uint32_t>(is) != kDatasetVersion) throw FormatError("unsupported dataset version");
  Dataset ds;
  ds.site.config.n_antennas = static_cast<int>(io::read_le<std::uint32_t>(is));
  ds.site.config.n_paths = static_cast<int>(io::read_le<std::uint32_t>(is));
  const auto n_users = io::read_le<std::uint64_t>(is);
  ds.amp_scale = io::read_le<double>(is);
  ds.train_count = io::read_le<std::uint64_t>(is);
  const int n = ds.site.config.n_antennas;
  if (n < 2 || !(ds.amp_scale > 0.0) || ds.train_count > n_users) throw FormatError("inconsistent dataset header");
  ds.samples.resize(n_users);
  for (auto& r : ds.samples) {
    const double x = io::read_le<double>(is);
    const double y = io::read_le<double>(is);
    r.channel.ue_position = Point(x, y);
    const auto los = io::read_le<std::uint8_t>(is);
    if (los > 1) throw FormatError("corrupt LoS flag");
    r.channel.is_los = los == 1;
    r.channel.h.resize(n);
    for (int i = 0; i < n; ++i) {
      const double re = io::read_le<double>(is);
      const double im = io::read_le<double>(is);
      r.channel.h[i] = Complex(re, im);
    }
  }
  fill_targets(ds);
  return ds;
}

}  // namespace fbbs
