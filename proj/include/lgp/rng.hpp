#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace lgp {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent, reproducible stream for work item `idx` of a master seed.
// Parallel consumers draw from their own stream, so results do not depend on
// scheduling.
inline std::mt19937_64 substream(std::uint64_t master, std::uint64_t idx) {
  return std::mt19937_64(splitmix64(master ^ splitmix64(idx + 1)));
}

inline Eigen::VectorXd normal_vector(std::mt19937_64& gen, long size) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd v(size);
  for (long i = 0; i < size; ++i) v(i) = nd(gen);
  return v;
}

}  // namespace lgp
