#include <cstdio>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "deeppce/circuit_io.hpp"
#include "deeppce/training.hpp"

using namespace deeppce;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("deeppce_test_" + name)).string();
}

CircuitModel sample_model() {
  CircuitConfig c;
  c.d_in = 5;
  c.d_out = 2;
  c.scope_size = 2;
  c.max_order = 2;
  c.width = 3;
  c.seed = 17;
  c.marginals = {PolyFamily::uniform(1, 2), PolyFamily::hermite(), PolyFamily::normal(1, 3), PolyFamily::legendre(),
                 PolyFamily::hermite()};
  CircuitModel m = build(c);
  init_weights(m, TrainConfig{}, 3);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(32, 5) * 0.9;
  x.col(0).array() += 1.5;
  x.col(0) = x.col(0).cwiseMax(1.0).cwiseMin(2.0);
  calibrate_batchnorm(m, x);
  return m;
}

}  // namespace

TEST(CircuitIo, RoundTripIsExact) {
  const CircuitModel m = sample_model();
  const std::string path = temp_path("model.bin");
  save(m, path, {{"note", "hello"}});
  const LoadedModel back = load_with_metadata(path);
  EXPECT_EQ(back.model, m);
  EXPECT_EQ(back.metadata["note"], "hello");
  const CircuitModel folded = folded_copy(m);
  save(folded, path);
  const CircuitModel folded_back = load(path);
  EXPECT_EQ(folded_back, folded);
  EXPECT_TRUE(folded_back.folded());
  std::remove(path.c_str());
}

TEST(CircuitIo, DetectsCorruption) {
  const CircuitModel m = sample_model();
  const std::string path = temp_path("corrupt.bin");
  save(m, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto expect_code = [&](const std::string& content, ErrorCode code) {
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << content;
    }
    try {
      load(path);
      ADD_FAILURE() << "expected " << to_string(code);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code) << e.what();
    }
  };
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  expect_code(flipped, ErrorCode::ChecksumMismatch);
  expect_code(bytes.substr(0, bytes.size() - 8), ErrorCode::MalformedFile);
  std::string version = bytes;
  const auto pos = version.find("\"schema_version\":1");
  ASSERT_NE(pos, std::string::npos);
  version.replace(pos, 18, "\"schema_version\":2");
  expect_code(version, ErrorCode::VersionMismatch);
  expect_code("NOT-A-MODEL\n{}\n", ErrorCode::MalformedFile);
  std::string bad_json = bytes;
  bad_json[bad_json.find('{')] = '[';
  expect_code(bad_json, ErrorCode::MalformedFile);
  std::remove(path.c_str());
  try {
    load(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
}
