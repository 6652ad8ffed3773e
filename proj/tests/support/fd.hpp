#pragma once

// Central finite-difference oracle, independent of the tape machinery: it
// only needs a black-box scalar function of a tensor.

#include <functional>

#include "xmask/tensor.hpp"

namespace xmask::testing {

template <typename F>
Tensor<double> fd_grad(F&& f, const Tensor<double>& x, double h = 1e-4) {
  Tensor<double> g(x.shape());
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Vector-level relative error: ||a - b||_inf / max(||b||_inf, floor).
inline double rel_error(const Tensor<double>& a, const Tensor<double>& b, double floor = 1e-8) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    ref = std::max(ref, std::abs(b[i]));
  }
  return diff / std::max(ref, floor);
}

}  // namespace xmask::testing
