#pragma once

#include <random>
#include <vector>

#include "kdnas/tensor.hpp"

namespace kdnas::testing {

inline Tensor random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, bool grad = true, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(r, c, std::move(v), grad);
}

}  // namespace kdnas::testing
