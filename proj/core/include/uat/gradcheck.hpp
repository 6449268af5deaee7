#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "uat/tensor.hpp"

namespace uat {

// Central-difference gradient verification. Perturbs every coordinate of x
// by +/- step, evaluates f, and compares the quotient against analytic[i].
// Returns the worst relative error, |fd - an| / max(|fd|, |an|, floor).
// The caller's tensor is never mutated; f sees a private copy.
template <class T>
double finite_difference_check(const std::function<double(const Tensor<T>&)>& f, const Tensor<T>& x,
                               const Tensor<T>& analytic, double step, double floor = 1e-6) {
  if (!same_shape(x.shape(), analytic.shape()))
    throw ShapeError("finite_difference_check: analytic gradient shape " + shape_str(analytic.shape()) +
                     " does not match input " + shape_str(x.shape()));
  Tensor<T> probe = x.clone();
  double worst = 0;
  for (int64_t i = 0; i < probe.size(); ++i) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(static_cast<double>(orig) + step);
    const double fp = f(probe);
    probe[i] = static_cast<T>(static_cast<double>(orig) - step);
    const double fm = f(probe);
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * step);
    const double an = static_cast<double>(analytic[i]);
    const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace uat
