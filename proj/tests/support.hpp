#pragma once

#include <random>

#include "stmchain/spin.hpp"

namespace testing {

inline stmchain::Matrix random_hermitian(Eigen::Index n, std::mt19937& rng, double scale = 1.0) {
  std::normal_distribution<double> g;
  stmchain::Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = {g(rng), g(rng)};
  }
  return 0.5 * scale * (a + a.adjoint());
}

inline stmchain::Vector random_state(Eigen::Index n, std::mt19937& rng) {
  std::normal_distribution<double> g;
  stmchain::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = {g(rng), g(rng)};
  return v / v.norm();
}

}  // namespace testing
