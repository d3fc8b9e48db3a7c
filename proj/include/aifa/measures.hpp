#pragma once

#include <json.hpp>
#include <string>
#include <vector>

namespace aifa {

enum class Family { Beta, BetaPrime, Gamma, GeneralizedGamma };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

// Rate measure
//   nu(dtheta) = gamma * theta^(-1-d) * g(theta)^(-d) * h(theta; eta) / Z(1-d, eta)
// for one of four families. Immutable; validated on construction.
//
// Beta:             g = 1, h = (1-theta)^(eta-1) on (0,1], Z = B(xi, eta); alpha = eta - d
// BetaPrime:        g = 1/(1+theta), h = (1+theta)^(-eta), Z = B(xi, eta)
// Gamma:            g = 1, h = exp(-lambda theta), Z = Gamma(xi) lambda^(-xi)
// GeneralizedGamma: g = 1, h = exp(-(eta1 theta)^eta2), Z = Gamma(xi/eta2) eta1^(-xi) / eta2
class RateMeasureSpec {
 public:
  // Beta process BP(gamma, alpha, d), i.e. eta = alpha + d.
  static RateMeasureSpec beta(double gamma, double alpha, double d = 0.0);
  static RateMeasureSpec beta_prime(double gamma, double eta, double d = 0.0);
  static RateMeasureSpec gamma_process(double gamma, double lambda, double d = 0.0);
  static RateMeasureSpec generalized_gamma(double gamma, double eta1, double eta2, double d = 0.0);

  Family family() const { return family_; }
  double mass() const { return gamma_; }
  double discount() const { return d_; }
  // Family extras: Beta/BetaPrime {eta}, Gamma {lambda}, GeneralizedGamma {eta1, eta2}.
  const std::vector<double>& extras() const { return eta_; }
  double eta() const { return eta_[0]; }
  // Beta family concentration alpha = eta - d.
  double alpha() const;

  bool bounded_support() const { return family_ == Family::Beta; }
  double support_upper() const;

  double log_g(double theta) const;
  double log_h(double theta) const;
  double log_h0() const { return 0.0; }

  // Z(xi, eta) and its log. Throws DomainError outside the convergence region.
  double log_normalizer(double xi) const;
  double normalizer(double xi) const;

  // c = gamma * h(0) / Z(1 - d, eta)
  double aifa_constant() const;

  nlohmann::json to_json() const;
  static RateMeasureSpec from_json(const nlohmann::json& j);

  friend bool operator==(const RateMeasureSpec&, const RateMeasureSpec&) = default;

 private:
  RateMeasureSpec(Family f, double gamma, double d, std::vector<double> eta);
  Family family_;
  double gamma_;
  double d_;
  std::vector<double> eta_;
};

double rate_log_density(const RateMeasureSpec& spec, double theta);
double rate_density(const RateMeasureSpec& spec, double theta);
double log_normalizer_Z(const RateMeasureSpec& spec, double xi);
double normalizer_Z(const RateMeasureSpec& spec, double xi);

enum class IndicatorKind { Hard, Smoothed };

struct ApproxIndicator {
  IndicatorKind kind = IndicatorKind::Smoothed;
  double width = 1.0;

  ApproxIndicator() = default;
  ApproxIndicator(IndicatorKind k, double b);
};

double indicator_value(const ApproxIndicator& ind, double theta);
double indicator_derivative(const ApproxIndicator& ind, double theta);

}  // namespace aifa
