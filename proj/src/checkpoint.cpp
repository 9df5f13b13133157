#include "fbbs/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "fbbs/binary_io.hpp"
#include "fbbs/errors.hpp"

namespace fbbs {

namespace {

constexpr std::string_view kCheckpointMagic = "FBBSCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::string_view kEmaSuffix = ".ema";

void write_tensor(std::ostream& os, const std::string& name, const ad::Matrix<float>& t) {
  if (name.size() > 0xffff) throw ConfigError("tensor name too long");
  io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  io::write_le<std::uint8_t>(os, 2);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rows()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.cols()));
  for (Eigen::Index i = 0; i < t.size(); ++i) io::write_le<float>(os, t.data()[i]);
}

std::pair<std::string, ad::Matrix<float>> read_tensor(std::istream& is) {
  const auto len = io::read_le<std::uint16_t>(is);
  std::string name(len, '\0');
  is.read(name.data(), len);
  if (!is) throw FormatError("truncated tensor name");
  const auto rank = io::read_le<std::uint8_t>(is);
  if (rank > 2) throw FormatError("tensor rank above 2 in " + name);
  std::uint32_t dims[2] = {1, 1};
  // Rank-1 tensors load as row vectors.
  if (rank == 1) dims[1] = io::read_le<std::uint32_t>(is);
  if (rank == 2) {
    dims[0] = io::read_le<std::uint32_t>(is);
    dims[1] = io::read_le<std::uint32_t>(is);
  }
  if (static_cast<std::uint64_t>(dims[0]) * dims[1] > (1ULL << 31)) throw FormatError("tensor too large: " + name);
  ad::Matrix<float> t(dims[0], dims[1]);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = io::read_le<float>(is);
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path.string() + " for writing");
  io::write_magic(os, kCheckpointMagic);
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  const ModelConfig& c = ckpt.config;
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.embed_dim));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_blocks));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_heads));
  io::write_le<double>(os, c.ffn_multiplier);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.n_channels));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.seq_len));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.cond_dim));
  io::write_le<double>(os, ckpt.normalization.mean_db);
  io::write_le<double>(os, ckpt.normalization.std_db);
  io::write_le<double>(os, ckpt.amp_scale);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.raw.size() + ckpt.ema.size()));
  for (std::size_t i = 0; i < ckpt.raw.size(); ++i) write_tensor(os, ckpt.raw.names[i], ckpt.raw.tensors[i]);
  for (std::size_t i = 0; i < ckpt.ema.size(); ++i)
    write_tensor(os, ckpt.ema.names[i] + std::string(kEmaSuffix), ckpt.ema.tensors[i]);
  if (!os) throw ConfigError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint " + path.string());
  io::expect_magic(is, kCheckpointMagic);
  if (io::read_le<std::uint32_t>(is) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.embed_dim = static_cast<int>(io::read_le<std::uint32_t>(is));
  c.n_blocks = static_cast<int>(io::read_le<std::uint32_t>(is));
  c.n_heads = static_cast<int>(io::read_le<std::uint32_t>(is));
  c.ffn_multiplier = io::read_le<double>(is);
  c.n_channels = static_cast<int>(io::read_le<std::uint32_t>(is));
  c.seq_len = static_cast<int>(io::read_le<std::uint32_t>(is));
  c.cond_dim = static_cast<int>(io::read_le<std::uint32_t>(is));
  ckpt.normalization.mean_db = io::read_le<double>(is);
  ckpt.normalization.std_db = io::read_le<double>(is);
  ckpt.amp_scale = io::read_le<double>(is);
  const auto count = io::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = read_tensor(is);
    if (name.size() > kEmaSuffix.size() && name.ends_with(kEmaSuffix)) {
      name.resize(name.size() - kEmaSuffix.size());
      ckpt.ema.add(std::move(name), std::move(tensor));
    } else {
      if (ckpt.ema.size() != 0) throw FormatError("raw tensor after EMA tensors");
      ckpt.raw.add(std::move(name), std::move(tensor));
    }
  }
  if (ckpt.ema.size() != 0 && ckpt.ema.names != ckpt.raw.names) throw FormatError("EMA tensors do not mirror raw tensors");
  if (!ckpt.raw.all_finite() || !ckpt.ema.all_finite()) throw FormatError("non-finite parameter values");
  return ckpt;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::istreambuf_iterator<char> it(is), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fbbs
