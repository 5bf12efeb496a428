#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mefa/numerics/tensor.hpp"

namespace mefa::num {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(shape_size(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> values(shape_size(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

/// Index in [0, n) from the raw engine output; platform-independent.
inline std::size_t draw_index(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

/// Uniform double in [0, 1) from the top 53 bits of the engine output.
inline double draw_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Derives an independent stream seed from a base seed and a salt (splitmix64 step).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mefa::num
