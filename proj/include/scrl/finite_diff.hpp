#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "scrl/tensor.hpp"

namespace scrl {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, one coordinate at a
// time. Used as the independent oracle for reverse-mode gradients.
inline Tensor<double> finite_diff_grad(
    const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
    double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor<double> probe = x;
  probe.set_requires_grad(false);
  Tensor<double> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
// whose true gradient is ~0 from dividing rounding noise by zero.
inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-8) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace scrl
