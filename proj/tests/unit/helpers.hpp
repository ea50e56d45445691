#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "aba/blur.hpp"
#include "aba/tensor.hpp"

namespace aba::test {

inline Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, h, w);
  for (double& v : t.data) v = u(rng);
  return t;
}

inline Tensor random_simplex(int k, int h, int w, std::mt19937_64& rng) {
  return project_simplex_l1(random_tensor(k, h, w, rng, 0.05, 1.0));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("aba_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace aba::test
