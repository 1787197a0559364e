#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "scrl/tensor.hpp"

namespace scrl {

using Rng = std::mt19937_64;

// Truncated normal with stddev 1/sqrt(fan_in), cut at +-truncation stddevs.
struct InitConfig {
  double mean = 0.0;
  double truncation = 2.0;
  std::uint64_t seed = 0;
};

inline double truncated_normal(Rng& rng, double mean, double stddev,
                               double truncation) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const double z = normal(rng);
    if (std::abs(z) <= truncation) return mean + stddev * z;
  }
}

template <typename T>
void init_truncated_normal(Tensor<T>& t, std::size_t fan_in, const InitConfig& cfg,
                           Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : t.data()) {
    v = static_cast<T>(truncated_normal(rng, cfg.mean, stddev, cfg.truncation));
  }
}

}  // namespace scrl
