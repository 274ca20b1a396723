#ifndef KNNCROSS_GRADCHECK_HPP
#define KNNCROSS_GRADCHECK_HPP

#include <cmath>

#include "knncross/errors.hpp"
#include "knncross/matrix.hpp"

namespace knncross {

// Central-difference check of an analytic gradient. Perturbs x one entry at a
// time (restoring it afterwards) and returns the worst relative mismatch
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// over all entries. Run this on the double instantiation: float arithmetic
// leaves more rounding noise in the differences than the bounds being checked.
template <class Real, class F>
double grad_check(F&& f, const Mat<Real>& analytic, Mat<Real>& x, double eps) {
  if (eps <= 0) throw ArgumentError("grad_check: eps must be positive");
  if (analytic.rows != x.rows || analytic.cols != x.cols)
    throw ShapeError("grad_check: " + shape_str(analytic.rows, analytic.cols) +
                     " vs " + shape_str(x.rows, x.cols));
  double worst = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const Real saved = x.data[i];
    x.data[i] = Real(double(saved) + eps);
    double lp = f(const_cast<const Mat<Real>&>(x));
    x.data[i] = Real(double(saved) - eps);
    double lm = f(const_cast<const Mat<Real>&>(x));
    x.data[i] = saved;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw NumericError("grad_check: non-finite loss during perturbation");
    double numeric = (lp - lm) / (2.0 * eps);
    double a = double(analytic.data[i]);
    double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace knncross

#endif
