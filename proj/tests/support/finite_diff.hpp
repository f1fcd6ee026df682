#ifndef VIBENCH_TESTS_FINITE_DIFF_HPP
#define VIBENCH_TESTS_FINITE_DIFF_HPP

#include <algorithm>
#include <cmath>
#include <functional>

#include "vibench/numkit.hpp"

namespace vibench::testing {

inline Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                                 double h = 1e-5) {
  Vector g(x.size());
  Vector y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x[i]));
    y[i] = x[i] + step;
    const double up = f(y);
    y[i] = x[i] - step;
    const double down = f(y);
    y[i] = x[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// Max-norm error relative to the reference; the floor keeps near-zero
// gradients from turning round-off into a large ratio.
inline double relative_gradient_error(const Vector& analytic, const Vector& reference,
                                      double floor = 1e-3) {
  const double scale = std::max(reference.cwiseAbs().maxCoeff(), floor);
  return (analytic - reference).cwiseAbs().maxCoeff() / scale;
}

}  // namespace vibench::testing

#endif
