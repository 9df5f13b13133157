#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "fbbs/checkpoint.hpp"
#include "fbbs/errors.hpp"

using namespace fbbs;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config.embed_dim = 16;
  c.config.n_blocks = 1;
  c.config.n_heads = 2;
  c.config.seq_len = 8;
  c.config.cond_dim = 8;
  c.normalization = {-12.5, 4.25};
  c.amp_scale = 0.37;
  c.raw = init_parameters<float>(c.config, 9);
  c.ema = c.raw;
  for (auto& t : c.ema.tensors) t.array() += 0.5f;
  return c;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const fs::path path = fs::temp_directory_path() / "fbbs_test_ckpt.bin";
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.config == c.config);
  CHECK(back.normalization.mean_db == c.normalization.mean_db);
  CHECK(back.normalization.std_db == c.normalization.std_db);
  CHECK(back.amp_scale == c.amp_scale);
  REQUIRE(back.raw.size() == c.raw.size());
  REQUIRE(back.ema.size() == c.ema.size());
  for (std::size_t i = 0; i < c.raw.size(); ++i) {
    CHECK(back.raw.names[i] == c.raw.names[i]);
    CHECK(back.raw.tensors[i] == c.raw.tensors[i]);
    CHECK(back.ema.tensors[i] == c.ema.tensors[i]);
  }
  CHECK(&back.weights(true) == &back.ema);
  CHECK(&back.weights(false) == &back.raw);

  const std::string bytes = read_bytes(path);
  CHECK(bytes.substr(0, 8) == "FBBSCKPT");
  const fs::path copy = fs::temp_directory_path() / "fbbs_test_ckpt2.bin";
  save_checkpoint(back, copy);
  CHECK(read_bytes(copy) == bytes);
  CHECK(file_digest(copy) == file_digest(path));
  CHECK(file_digest(path).size() == 16);

  write_bytes(copy, "FBBSCKPX" + bytes.substr(8));
  CHECK_THROWS_AS(load_checkpoint(copy), FormatError);
  std::string version = bytes;
  version[8] = 7;
  write_bytes(copy, version);
  CHECK_THROWS_AS(load_checkpoint(copy), FormatError);
  write_bytes(copy, bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(copy), FormatError);
  fs::remove(path);
  fs::remove(copy);
}

TEST_CASE("non-finite tensors are rejected") {
  const fs::path path = fs::temp_directory_path() / "fbbs_test_ckpt_nan.bin";
  Checkpoint c = sample_checkpoint();
  c.raw.tensors[0](0, 0) = std::numeric_limits<float>::quiet_NaN();
  save_checkpoint(c, path);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  fs::remove(path);
}
