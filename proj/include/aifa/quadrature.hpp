#pragma once

#include <functional>

namespace aifa {

struct QuadratureResult {
  double value;
  double error;
  double l1;
};

// Adaptive Gauss-Kronrod (Legendre nodes) on [a, b]; either limit may be
// infinite. Throws NumericalError when the error estimate exceeds
// max(abs_tol, rel_tol * |value|).
QuadratureResult integrate(const std::function<double(double)>& f, double a, double b,
                           double abs_tol = 1e-10, double rel_tol = 1e-12, unsigned max_depth = 25);

}  // namespace aifa
