// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "nca/nca.hpp"
#include "nca/rng.hpp"
#include "nca/sample.hpp"
#include "nca/tensor.hpp"

namespace nca::test {

inline Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

/// Params with a nonzero output layer so every gradient path is live.
inline RuleParams random_params(const NcaConfig& cfg, std::uint64_t seed, float w2_scale = 0.1f) {
  Rng rng(seed);
  RuleParams p = RuleParams::init(cfg, rng);
  for (float& v : p.w2.data()) v = w2_scale * (2.0f * uniform01(rng) - 1.0f);
  for (float& v : p.b1.data()) v = 0.05f * (2.0f * uniform01(rng) - 1.0f);
  return p;
}

inline Sample random_sample(std::size_t rows, std::size_t cols, std::size_t n_cls, Rng& rng) {
  Sample s{Tensor({1, rows, cols}), Tensor({rows, cols}), "test", "test"};
  for (float& v : s.image.data()) v = uniform01(rng);
  for (float& v : s.mask.data()) v = static_cast<float>(rng() % n_cls);
  return s;
}

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "nca_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace nca::test
