#ifndef NMFNET_RNG_HPP_
#define NMFNET_RNG_HPP_

#include <cstdint>
#include <random>

#include "nmfnet/tensor.hpp"

namespace nmfnet {

using Rng = std::mt19937_64;

// Derives an independent stream from a master seed (splitmix64 scramble).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Tensor uniform_tensor(std::vector<std::size_t> shape, Rng& rng,
                             double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

inline Tensor normal_tensor(std::vector<std::size_t> shape, Rng& rng,
                            double mean = 0.0, double stddev = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace nmfnet

#endif  // NMFNET_RNG_HPP_
