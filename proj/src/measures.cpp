#include "aifa/measures.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <json.hpp>

#include "aifa/errors.hpp"

namespace aifa {

namespace {

double log_beta_fn(double a, double b) {
  return boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b);
}

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::Beta: return "beta";
    case Family::BetaPrime: return "beta_prime";
    case Family::Gamma: return "gamma";
    case Family::GeneralizedGamma: return "generalized_gamma";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "beta") return Family::Beta;
  if (s == "beta_prime") return Family::BetaPrime;
  if (s == "gamma") return Family::Gamma;
  if (s == "generalized_gamma") return Family::GeneralizedGamma;
  throw DomainError("unknown family '" + s + "'");
}

RateMeasureSpec::RateMeasureSpec(Family f, double gamma, double d, std::vector<double> eta)
    : family_(f), gamma_(gamma), d_(d), eta_(std::move(eta)) {
  require(std::isfinite(gamma) && gamma > 0.0, "rate measure: mass gamma must be positive");
  require(d >= 0.0 && d < 1.0, "rate measure: discount must lie in [0, 1)");
  for (double e : eta_) require(std::isfinite(e) && e > 0.0, "rate measure: extras must be positive");
  const std::size_t want = f == Family::GeneralizedGamma ? 2 : 1;
  require(eta_.size() == want, "rate measure: wrong number of extras");
}

RateMeasureSpec RateMeasureSpec::beta(double gamma, double alpha, double d) {
  require(alpha > -d, "beta process: alpha must exceed -d");
  return RateMeasureSpec(Family::Beta, gamma, d, {alpha + d});
}

RateMeasureSpec RateMeasureSpec::beta_prime(double gamma, double eta, double d) {
  return RateMeasureSpec(Family::BetaPrime, gamma, d, {eta});
}

RateMeasureSpec RateMeasureSpec::gamma_process(double gamma, double lambda, double d) {
  return RateMeasureSpec(Family::Gamma, gamma, d, {lambda});
}

RateMeasureSpec RateMeasureSpec::generalized_gamma(double gamma, double eta1, double eta2, double d) {
  return RateMeasureSpec(Family::GeneralizedGamma, gamma, d, {eta1, eta2});
}

double RateMeasureSpec::alpha() const {
  if (family_ != Family::Beta) throw DomainError("alpha is defined for the beta family only");
  return eta_[0] - d_;
}

double RateMeasureSpec::support_upper() const { return bounded_support() ? 1.0 : INFINITY; }

double RateMeasureSpec::log_g(double theta) const {
  return family_ == Family::BetaPrime ? -std::log1p(theta) : 0.0;
}

double RateMeasureSpec::log_h(double theta) const {
  switch (family_) {
    case Family::Beta: return (eta_[0] - 1.0) * std::log1p(-theta);
    case Family::BetaPrime: return -eta_[0] * std::log1p(theta);
    case Family::Gamma: return -eta_[0] * theta;
    case Family::GeneralizedGamma: return -std::pow(eta_[0] * theta, eta_[1]);
  }
  return 0.0;
}

double RateMeasureSpec::log_normalizer(double xi) const {
  if (!(xi > 0.0)) throw DomainError("normalizer: xi must be positive");
  switch (family_) {
    case Family::Beta:
    case Family::BetaPrime: return log_beta_fn(xi, eta_[0]);
    case Family::Gamma: return boost::math::lgamma(xi) - xi * std::log(eta_[0]);
    case Family::GeneralizedGamma:
      return boost::math::lgamma(xi / eta_[1]) - xi * std::log(eta_[0]) - std::log(eta_[1]);
  }
  return 0.0;
}

double RateMeasureSpec::normalizer(double xi) const { return std::exp(log_normalizer(xi)); }

double RateMeasureSpec::aifa_constant() const {
  return gamma_ * std::exp(log_h0() - log_normalizer(1.0 - d_));
}

nlohmann::json RateMeasureSpec::to_json() const {
  nlohmann::json extras;
  switch (family_) {
    case Family::Beta: extras = {{"alpha", alpha()}}; break;
    case Family::BetaPrime: extras = {{"eta", eta_[0]}}; break;
    case Family::Gamma: extras = {{"lambda", eta_[0]}}; break;
    case Family::GeneralizedGamma: extras = {{"eta1", eta_[0]}, {"eta2", eta_[1]}}; break;
  }
  return {{"family", to_string(family_)}, {"gamma", gamma_}, {"discount", d_}, {"extras", extras}};
}

RateMeasureSpec RateMeasureSpec::from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items())
    if (key != "family" && key != "gamma" && key != "discount" && key != "extras")
      throw DomainError("rate measure: unknown field '" + key + "'");
  const Family f = family_from_string(j.at("family").get<std::string>());
  const double gamma = j.at("gamma").get<double>();
  const double d = j.value("discount", 0.0);
  const auto& ex = j.at("extras");
  auto only = [&](std::initializer_list<const char*> keys) {
    for (const auto& [key, _] : ex.items()) {
      bool known = false;
      for (const char* k : keys) known = known || key == k;
      if (!known) throw DomainError("rate measure: unknown extra '" + key + "'");
    }
  };
  switch (f) {
    case Family::Beta: only({"alpha"}); return beta(gamma, ex.at("alpha").get<double>(), d);
    case Family::BetaPrime: only({"eta"}); return beta_prime(gamma, ex.at("eta").get<double>(), d);
    case Family::Gamma: only({"lambda"}); return gamma_process(gamma, ex.at("lambda").get<double>(), d);
    case Family::GeneralizedGamma:
      only({"eta1", "eta2"});
      return generalized_gamma(gamma, ex.at("eta1").get<double>(), ex.at("eta2").get<double>(), d);
  }
  throw DomainError("rate measure: bad family");
}

double rate_log_density(const RateMeasureSpec& spec, double theta) {
  if (!(theta > 0.0) || !(theta <= spec.support_upper()) || !std::isfinite(theta))
    throw DomainError("rate density: theta outside the support");
  if (spec.bounded_support() && theta == 1.0 && spec.eta() < 1.0)
    throw DomainError("rate density: infinite at theta = 1");
  const double d = spec.discount();
  return std::log(spec.mass()) - (1.0 + d) * std::log(theta) - d * spec.log_g(theta) + spec.log_h(theta) -
         spec.log_normalizer(1.0 - d);
}

double rate_density(const RateMeasureSpec& spec, double theta) { return std::exp(rate_log_density(spec, theta)); }

double log_normalizer_Z(const RateMeasureSpec& spec, double xi) { return spec.log_normalizer(xi); }

double normalizer_Z(const RateMeasureSpec& spec, double xi) { return spec.normalizer(xi); }

ApproxIndicator::ApproxIndicator(IndicatorKind k, double b) : kind(k), width(b) {
  if (!(b > 0.0)) throw DomainError("indicator width must be positive");
}

double indicator_value(const ApproxIndicator& ind, double theta) {
  if (theta <= 0.0) return 0.0;
  if (ind.kind == IndicatorKind::Hard || theta >= ind.width) return 1.0;
  const double u = (theta - ind.width) / ind.width;
  return std::exp(1.0 - 1.0 / (1.0 - u * u));
}

double indicator_derivative(const ApproxIndicator& ind, double theta) {
  if (theta <= 0.0 || ind.kind == IndicatorKind::Hard || theta >= ind.width) return 0.0;
  const double u = (theta - ind.width) / ind.width;
  const double w = 1.0 - u * u;
  return std::exp(1.0 - 1.0 / w) * (-2.0 * u / (w * w)) / ind.width;
}

}  // namespace aifa
