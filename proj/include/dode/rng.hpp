#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace dode {

using Rng = std::mt19937_64;

// Independent stream for (seed, task...) so per-datum / per-draw work does not
// depend on evaluation order.
inline Rng task_rng(std::uint64_t seed, std::uint64_t task) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(task >> 32)};
  return Rng(seq);
}

inline Rng task_rng(std::uint64_t seed, std::uint64_t task, std::uint64_t sub) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(task >> 32),
                    static_cast<std::uint32_t>(sub),  static_cast<std::uint32_t>(sub >> 32)};
  return Rng(seq);
}

inline Eigen::VectorXd standard_normal(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> n01;
  Eigen::VectorXd v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = n01(rng);
  return v;
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace dode
