#include "aifa/inverse_cdf.hpp"

#include <algorithm>
#include <array>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>

#include "aifa/errors.hpp"
#include "aifa/numeric.hpp"

namespace aifa {

namespace {

using Rule = boost::math::quadrature::gauss<double, 16>;

}  // namespace

std::vector<double> make_knots(double lo, double hi, int count, const std::vector<double>& forced) {
  std::vector<double> k;
  k.reserve(count + forced.size());
  for (int i = 0; i < count; ++i) k.push_back(lo + (hi - lo) * i / (count - 1));
  for (double f : forced)
    if (f > lo && f < hi) k.push_back(f);
  std::sort(k.begin(), k.end());
  k.erase(std::unique(k.begin(), k.end(), [](double a, double b) { return std::abs(a - b) < 1e-13; }), k.end());
  return k;
}

double InverseCdfTable::log_interval_mass(double a, double b) const {
  const auto& x = Rule::abscissa();
  const auto& w = Rule::weights();
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  std::array<double, 2 * 8 + 1> terms{};
  std::size_t n = 0;
  auto push = [&](double node, double weight) {
    terms[n++] = std::log(weight * half) + log_density_(mid + half * node);
  };
  // 16-point rule: abscissae stored for the positive half, no zero node.
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) {
      push(0.0, w[i]);
    } else {
      push(x[i], w[i]);
      push(-x[i], w[i]);
    }
  }
  return log_sum_exp(std::span<const double>(terms.data(), n));
}

InverseCdfTable::InverseCdfTable(std::function<double(double)> log_density, std::vector<double> knots,
                                 double lower_rate, double upper_rate)
    : log_density_(std::move(log_density)),
      knots_(std::move(knots)),
      lower_rate_(lower_rate),
      upper_rate_(upper_rate) {
  const std::size_t n = knots_.size();
  if (n < 2) throw DomainError("inverse cdf table needs at least two knots");
  std::vector<double> logm(n + 1);
  log_lower_ = lower_rate_ > 0.0 ? log_density_(knots_.front()) - std::log(lower_rate_) : -kInf;
  log_upper_ = upper_rate_ > 0.0 ? log_density_(knots_.back()) - std::log(upper_rate_) : -kInf;
  logm[0] = log_lower_;
  for (std::size_t i = 0; i + 1 < n; ++i) logm[i + 1] = log_interval_mass(knots_[i], knots_[i + 1]);
  logm[n] = log_upper_;
  log_mass_ = log_sum_exp(logm);
  if (!std::isfinite(log_mass_)) throw NumericalError("inverse cdf table: non-finite total mass");

  cdf_.resize(n);
  CompensatedSum acc;
  for (std::size_t i = 0; i < n; ++i) {
    acc += std::exp(logm[i] - log_mass_);
    cdf_[i] = std::min(acc.value(), 1.0);
  }

  // Exact dt/dF = mass / density, then Fritsch-Carlson limiting per interval.
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = std::exp(log_mass_ - log_density_(knots_[i]));
  slope_.assign(n, 0.0);
  slope_right_.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double dF = cdf_[i + 1] - cdf_[i];
    const double dt = knots_[i + 1] - knots_[i];
    if (!(dF > 0.0)) continue;
    const double delta = dt / dF;
    double a = std::isfinite(m[i]) ? m[i] / delta : 3.0;
    double b = std::isfinite(m[i + 1]) ? m[i + 1] / delta : 3.0;
    const double s = a * a + b * b;
    if (s > 9.0) {
      const double tau = 3.0 / std::sqrt(s);
      a *= tau;
      b *= tau;
    }
    slope_[i] = a * delta;
    slope_right_[i] = b * delta;
  }
}

double InverseCdfTable::quantile(double u) const {
  const std::size_t n = knots_.size();
  if (u <= cdf_.front()) {
    if (lower_rate_ <= 0.0) return knots_.front();
    return knots_.front() + std::log(u / cdf_.front()) / lower_rate_;
  }
  if (u >= cdf_.back()) {
    if (upper_rate_ <= 0.0) return knots_.back();
    const double tail = 1.0 - cdf_.back();
    return knots_.back() - std::log((1.0 - u) / tail) / upper_rate_;
  }
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  std::size_t i = static_cast<std::size_t>(it - cdf_.begin()) - 1;
  i = std::min(i, n - 2);
  const double F0 = cdf_[i], F1 = cdf_[i + 1];
  const double h = F1 - F0;
  if (!(h > 0.0)) return knots_[i];
  const double s = (u - F0) / h;
  const double s2 = s * s, s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
  const double t = h00 * knots_[i] + h10 * h * slope_[i] + h01 * knots_[i + 1] + h11 * h * slope_right_[i];
  return std::clamp(t, knots_[i], knots_[i + 1]);
}

double InverseCdfTable::cdf(double t) const {
  if (t <= knots_.front()) {
    if (lower_rate_ <= 0.0) return 0.0;
    return cdf_.front() * std::exp(lower_rate_ * (t - knots_.front()));
  }
  if (t >= knots_.back()) {
    if (upper_rate_ <= 0.0) return 1.0;
    return 1.0 - (1.0 - cdf_.back()) * std::exp(-upper_rate_ * (t - knots_.back()));
  }
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - knots_.begin()) - 1;
  return std::min(1.0, cdf_[i] + std::exp(log_interval_mass(knots_[i], t) - log_mass_));
}

}  // namespace aifa
