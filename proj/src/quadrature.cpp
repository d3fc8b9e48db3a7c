#include "aifa/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <sstream>

#include "aifa/errors.hpp"

namespace aifa {

QuadratureResult integrate(const std::function<double(double)>& f, double a, double b,
                           double abs_tol, double rel_tol, unsigned max_depth) {
  QuadratureResult r{0.0, 0.0, 0.0};
  if (a == b) return r;
  // boost's tolerance is relative to the L1 norm; the absolute target is
  // checked below against its error estimate.
  r.value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, max_depth, rel_tol,
                                                                           &r.error, &r.l1);
  const double target = std::max(abs_tol, rel_tol * std::abs(r.value));
  if (!std::isfinite(r.value) || r.error > target) {
    std::ostringstream msg;
    msg << "quadrature on [" << a << ", " << b << "] did not converge: value=" << r.value
        << " error=" << r.error << " target=" << target;
    throw NumericalError(msg.str());
  }
  return r;
}

}  // namespace aifa
