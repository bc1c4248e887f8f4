#pragma once

#include <cmath>
#include <functional>

#include "pgt/array.hpp"

namespace pgt {

/// Central-difference gradient estimate of a scalar function:
/// (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every element i.
template <typename T>
Array<T> finite_difference_grad(const std::function<T(const Array<T>&)>& f, const Array<T>& x, T eps) {
  if (!(eps > T{0})) throw NumericError("finite difference step must be positive");
  Array<T> grad(x.shape());
  Array<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const T up = f(probe);
    probe[i] = x[i] - eps;
    const T down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite function value while differencing element " + std::to_string(i));
    }
    grad[i] = (up - down) / (T{2} * eps);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor); the floor keeps
/// near-zero gradients from inflating the ratio.
template <typename T>
T relative_error(const Array<T>& a, const Array<T>& b, T floor = T(1e-8)) {
  require_same_shape(a, b, "relative_error");
  T scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  return max_abs_diff(a, b) / scale;
}

}  // namespace pgt
