#pragma once

// Central finite-difference oracle shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "fan/rng.hpp"
#include "fan/tensor.hpp"

namespace fan::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Relative error with the denominator floored at 1e-5. Gradients that are
// zero analytically (a key bias under softmax shift invariance, say) then
// compare on an absolute 1e-9 scale, above central-difference round-off.
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-5});
}

/// Perturbs each entry of `x` by ±step, re-evaluates `loss` and compares the
/// central difference with `analytic[i]`.
inline GradCheck check_gradient(std::span<double> x, std::span<const double> analytic,
                                const std::function<double()>& loss, double step = 1e-5) {
  GradCheck out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = loss();
    x[i] = saved - step;
    const double minus = loss();
    x[i] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric);
    if (err > out.max_rel_error || out.checked == 0) {
      out.max_rel_error = std::max(out.max_rel_error, err);
      out.worst_index = i;
      out.analytic = analytic[i];
      out.numeric = numeric;
    }
    ++out.checked;
  }
  return out;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Weighted sum Σ w_i y_i; its gradient with respect to y is w.
inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace fan::testing
