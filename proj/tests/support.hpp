#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "aslp/grid.hpp"

namespace aslp::test {

// Test-side generator, independent of RandomSource.
inline std::mt19937_64& rng() {
  static std::mt19937_64 g(20240611);
  return g;
}

inline Grid random_probabilities(std::size_t h, std::size_t w, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(0.001, 0.999);
  Grid out(h, w);
  for (double& v : out) v = u(g);
  return out;
}

inline Grid random_hard(std::size_t h, std::size_t w, std::mt19937_64& g) {
  std::bernoulli_distribution b(0.5);
  Grid out(h, w);
  for (double& v : out) v = b(g) ? 1.0 : 0.0;
  return out;
}

inline Grid constant(std::size_t h, std::size_t w, double v) { return Grid(h, w, v); }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("aslp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace aslp::test
