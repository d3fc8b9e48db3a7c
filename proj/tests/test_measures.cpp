#include <doctest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>

#include "aifa/errors.hpp"
#include "aifa/measures.hpp"

using namespace aifa;

namespace {

std::vector<RateMeasureSpec> sample_specs() {
  return {RateMeasureSpec::beta(1.0, 1.0),           RateMeasureSpec::beta(2.0, 0.5, 0.3),
          RateMeasureSpec::beta(2.0, 0.0, 0.6),      RateMeasureSpec::beta_prime(1.5, 2.0),
          RateMeasureSpec::beta_prime(1.0, 0.7, 0.4), RateMeasureSpec::gamma_process(1.0, 1.0),
          RateMeasureSpec::gamma_process(3.0, 0.5, 0.5), RateMeasureSpec::generalized_gamma(1.0, 2.0, 0.5),
          RateMeasureSpec::generalized_gamma(2.0, 0.5, 2.0, 0.2)};
}

double integrate_log_theta(const RateMeasureSpec& s, double lo, double hi, double (*weight)(double)) {
  boost::math::quadrature::tanh_sinh<double> ts;
  auto f = [&](double t) {
    const double th = std::exp(t);
    if (th >= s.support_upper()) return 0.0;
    return std::exp(rate_log_density(s, th) + std::log(weight(th)) + t);
  };
  return ts.integrate(f, std::log(lo), std::log(hi));
}

}  // namespace

TEST_CASE("rate density hand values") {
  CHECK(rate_density(RateMeasureSpec::beta(1.0, 1.0), 0.5) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS_AS(rate_density(RateMeasureSpec::beta(1.0, 1.0), 1.5), DomainError);
  CHECK_THROWS_AS(rate_density(RateMeasureSpec::beta(1.0, 1.0), 0.0), DomainError);
  CHECK(rate_density(RateMeasureSpec::gamma_process(1.0, 1.0), 1.0) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  // gamma * lambda^(1-d) / Gamma(1-d) * theta^(-1-d) exp(-lambda theta)
  const double want = 3.0 * std::pow(0.5, 0.5) / std::tgamma(0.5) * std::pow(2.0, -1.5) * std::exp(-1.0);
  CHECK(rate_density(RateMeasureSpec::gamma_process(3.0, 0.5, 0.5), 2.0) == doctest::Approx(want).epsilon(1e-13));
  // beta prime: gamma / B(eta, 1-d) theta^(-1-d) (1+theta)^(d-eta), i.e. g(theta)^(-d) h(theta)
  const double bp = 1.0 / (std::tgamma(0.7) * std::tgamma(0.6) / std::tgamma(1.3)) * std::pow(0.3, -1.4) *
                    std::pow(1.3, -0.3);
  CHECK(rate_density(RateMeasureSpec::beta_prime(1.0, 0.7, 0.4), 0.3) == doctest::Approx(bp).epsilon(1e-13));
}

TEST_CASE("normalizer closed forms") {
  CHECK(normalizer_Z(RateMeasureSpec::beta(1.0, 1.0), 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(normalizer_Z(RateMeasureSpec::gamma_process(1.0, 2.0), 2.0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(normalizer_Z(RateMeasureSpec::gamma_process(1.0, 2.0), 0.0), DomainError);
  // Generalized gamma: Gamma(xi/eta2) (eta1 eta2)^(-xi) at xi = 1 and eta2 = 1.
  const auto gg = RateMeasureSpec::generalized_gamma(1.0, 2.0, 0.5);
  CHECK(normalizer_Z(gg, 1.0) == doctest::Approx(std::tgamma(2.0) / (2.0 * 0.5)).epsilon(1e-14));
  const auto gg1 = RateMeasureSpec::generalized_gamma(1.0, 3.0, 1.0);
  CHECK(normalizer_Z(gg1, 2.5) == doctest::Approx(std::tgamma(2.5) * std::pow(3.0, -2.5)).epsilon(1e-14));
}

TEST_CASE("normalizer equals the defining integral") {
  boost::math::quadrature::tanh_sinh<double> ts;
  for (const auto& s : sample_specs()) {
    for (double xi : {0.4, 1.0, 2.5}) {
      auto f = [&](double t) {
        const double th = std::exp(t);
        if (th >= s.support_upper()) return 0.0;
        return std::exp(xi * t + xi * s.log_g(th) + s.log_h(th));
      };
      const double hi = s.bounded_support() ? 0.0 : 8.0;
      const double num = ts.integrate(f, -200.0 / xi, hi) + (s.bounded_support() ? 0.0 : ts.integrate(f, 8.0, 200.0));
      CHECK(normalizer_Z(s, xi) == doctest::Approx(num).epsilon(1e-8));
    }
  }
}

TEST_CASE("indicator values") {
  const ApproxIndicator s01(IndicatorKind::Smoothed, 0.1);
  CHECK(indicator_value(s01, -0.5) == 0.0);
  CHECK(indicator_value(s01, 0.0) == 0.0);
  CHECK(indicator_value(s01, 0.2) == 1.0);
  const ApproxIndicator s1(IndicatorKind::Smoothed, 1.0);
  CHECK(indicator_value(s1, 0.5) == doctest::Approx(std::exp(-1.0 / 3.0)).epsilon(1e-15));
  CHECK(indicator_value(s1, 0.5) == doctest::Approx(0.716531).epsilon(1e-6));
  const ApproxIndicator hard(IndicatorKind::Hard, 1.0);
  CHECK(indicator_value(hard, 1e-300) == 1.0);
  CHECK(indicator_value(hard, 0.0) == 0.0);
  CHECK_THROWS_AS(ApproxIndicator(IndicatorKind::Smoothed, 0.0), DomainError);
}

TEST_CASE("smoothed indicator is monotone and differentiable") {
  for (double b : {0.01, 0.1, 1.0, 3.0}) {
    const ApproxIndicator ind(IndicatorKind::Smoothed, b);
    double prev = 0.0;
    for (int i = 0; i <= 1000; ++i) {
      const double v = indicator_value(ind, b * i / 1000.0);
      CHECK(v >= prev);
      prev = v;
    }
    for (double f : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const double th = f * b;
      const double h = 1e-6 * b;
      const double fd = (indicator_value(ind, th + h) - indicator_value(ind, th - h)) / (2 * h);
      const double an = indicator_derivative(ind, th);
      if (f == 0.0 || f == 1.0) {
        // derivative scale is 1/b
        CHECK(an == 0.0);
        CHECK(std::abs(fd) * b < 1e-6);
      } else {
        CHECK(fd == doctest::Approx(an).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("integrability near zero") {
  for (const auto& s : sample_specs()) {
    const double hi = s.bounded_support() ? 1.0 : 1e4;
    const double m = integrate_log_theta(s, 1e-300, hi, [](double th) { return std::min(1.0, th); });
    CHECK(std::isfinite(m));
    CHECK(m > 0.0);
    double prev = 0.0;
    for (double lo : {1e-2, 1e-4, 1e-8, 1e-16}) {
      const double part = integrate_log_theta(s, lo, hi, [](double) { return 1.0; });
      CHECK(part > prev);
      prev = part;
    }
  }
}

TEST_CASE("log and linear scale agree") {
  for (const auto& s : sample_specs()) {
    for (double th : {1e-6, 1e-3, 0.1, 0.5, 0.9}) {
      const double lin = rate_density(s, th);
      CHECK(std::exp(rate_log_density(s, th)) == doctest::Approx(lin).epsilon(1e-12));
    }
  }
}

TEST_CASE("mean atom mass of the three-parameter beta process") {
  // int theta nu(dtheta) = gamma for BP(gamma, 0, d)
  for (double d : {0.1, 0.6}) {
    const auto s = RateMeasureSpec::beta(2.0, 0.0, d);
    boost::math::quadrature::tanh_sinh<double> ts;
    // (1-theta)^(d-1) is not resolvable in double near 1: analytic tail on (1-delta, 1).
    const double delta = 1e-9;
    const double cst = 2.0 * std::tgamma(1.0) / (std::tgamma(1.0 - d) * std::tgamma(d));
    const double upper = ts.integrate([&](double th) { return th * rate_density(s, th); }, 0.5, 1.0 - delta) +
                         cst * std::pow(delta, d) / d;
    const double m = integrate_log_theta(s, 1e-300, 0.5, [](double th) { return th; }) + upper;
    CHECK(m == doctest::Approx(2.0).epsilon(1e-7));
  }
}

TEST_CASE("rate measure validation and JSON") {
  CHECK_THROWS_AS(RateMeasureSpec::beta(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(RateMeasureSpec::beta(1.0, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(RateMeasureSpec::beta(1.0, -0.5, 0.2), DomainError);
  CHECK_THROWS_AS(RateMeasureSpec::gamma_process(1.0, 0.0), DomainError);
  CHECK_THROWS_AS(RateMeasureSpec::generalized_gamma(1.0, 1.0, -1.0), DomainError);
  for (const auto& s : sample_specs()) CHECK(RateMeasureSpec::from_json(s.to_json()) == s);
  auto j = RateMeasureSpec::beta(1.0, 1.0).to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(RateMeasureSpec::from_json(j), DomainError);
}
