#pragma once

#include <functional>
#include <vector>

namespace aifa {

// Monotone inverse-CDF table for a density known up to a constant in a
// transformed coordinate t. Mass between knots comes from fixed
// Gauss-Legendre rules; inversion inside an interval is a monotone cubic
// Hermite interpolant of t as a function of F. Mass outside the knot range
// is modelled as exponential in t (power law in theta when t = log theta):
// density ~ exp(lower_rate * t) to the left and exp(-upper_rate * t) to the
// right. A rate of 0 means no mass beyond that end.
class InverseCdfTable {
 public:
  InverseCdfTable(std::function<double(double)> log_density, std::vector<double> knots, double lower_rate,
                  double upper_rate);

  // log of the total (unnormalized) mass including tails.
  double log_mass() const { return log_mass_; }
  double lower_tail_fraction() const { return cdf_.front(); }
  double upper_tail_fraction() const { return 1.0 - cdf_.back(); }

  double quantile(double u) const;
  double cdf(double t) const;
  const std::vector<double>& knots() const { return knots_; }

 private:
  double log_interval_mass(double a, double b) const;

  std::function<double(double)> log_density_;
  std::vector<double> knots_;
  std::vector<double> cdf_;    // normalized CDF at each knot
  std::vector<double> slope_;  // dt/dF at each knot, after monotone limiting (left/right per interval)
  std::vector<double> slope_right_;
  double lower_rate_;
  double upper_rate_;
  double log_mass_;
  double log_lower_;  // log mass of left tail
  double log_upper_;  // log mass of right tail
};

// Equally spaced knots on [lo, hi] (count points) merged with `forced`.
std::vector<double> make_knots(double lo, double hi, int count, const std::vector<double>& forced);

}  // namespace aifa
