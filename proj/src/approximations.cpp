#include "aifa/approximations.hpp"

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numeric>

#include "aifa/errors.hpp"
#include "aifa/numeric.hpp"
#include "aifa/quadrature.hpp"

namespace aifa {

namespace {

constexpr int kTableKnots = 4096;

double lgam(double x) { return boost::math::lgamma(x); }
double lbeta(double a, double b) { return lgam(a) + lgam(b) - lgam(a + b); }

// log(theta) and log(1 - theta) for theta = 1 / (1 + exp(-t)).
void logit_parts(double t, double& log_theta, double& log1m_theta) {
  if (t >= 0) {
    log_theta = -std::log1p(std::exp(-t));
    log1m_theta = -t - std::log1p(std::exp(-t));
  } else {
    log_theta = t - std::log1p(std::exp(t));
    log1m_theta = -std::log1p(std::exp(t));
  }
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace

// ---------------------------------------------------------------- AifaConfig

double AifaConfig::b_K() const {
  return bandwidth == BandwidthRule::InverseK ? 1.0 / K : 1.0 / std::sqrt(static_cast<double>(K));
}

void AifaConfig::validate() const {
  if (K < 1) throw DomainError("AIFA: K must be at least 1");
  if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("AIFA: a must be positive");
}

nlohmann::json AifaConfig::to_json() const {
  return {{"spec", spec.to_json()},
          {"K", K},
          {"a", a},
          {"bandwidth", bandwidth == BandwidthRule::InverseK ? "1/K" : "1/sqrt(K)"},
          {"indicator", indicator == IndicatorKind::Smoothed ? "smoothed" : "hard"}};
}

AifaConfig AifaConfig::from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items())
    if (key != "spec" && key != "K" && key != "a" && key != "bandwidth" && key != "indicator")
      throw DomainError("AIFA config: unknown field '" + key + "'");
  AifaConfig cfg{RateMeasureSpec::from_json(j.at("spec")), j.at("K").get<int>()};
  cfg.a = j.value("a", 1.0);
  const std::string bw = j.value("bandwidth", std::string("1/K"));
  if (bw == "1/K")
    cfg.bandwidth = BandwidthRule::InverseK;
  else if (bw == "1/sqrt(K)")
    cfg.bandwidth = BandwidthRule::InverseSqrtK;
  else
    throw DomainError("AIFA config: bandwidth must be '1/K' or '1/sqrt(K)'");
  const std::string ind = j.value("indicator", std::string("smoothed"));
  if (ind == "smoothed")
    cfg.indicator = IndicatorKind::Smoothed;
  else if (ind == "hard")
    cfg.indicator = IndicatorKind::Hard;
  else
    throw DomainError("AIFA config: indicator must be 'smoothed' or 'hard'");
  cfg.validate();
  return cfg;
}

// --------------------------------------------------------------- AifaDensity

AifaDensity::AifaDensity(AifaConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const RateMeasureSpec& s = cfg_.spec;
  c_ = s.aifa_constant();
  e_ = c_ / cfg_.K;

  const double knot1 = cfg_.a / cfg_.K;
  const double knot2 = knot1 + cfg_.b_K();
  const double upper = s.support_upper();
  const double theta0 = 1e-12 * std::min(knot1, 1.0);

  double t_hi = 0.0, upper_rate = 0.0;
  switch (s.family()) {
    case Family::Beta:
      t_hi = logit(1.0 - 1e-12);
      upper_rate = s.eta();
      break;
    case Family::BetaPrime:
      t_hi = std::log(1e12);
      upper_rate = s.eta();
      break;
    case Family::Gamma: t_hi = std::log(800.0 / s.eta() + 2.0 * knot2); break;
    case Family::GeneralizedGamma:
      t_hi = std::log(std::pow(800.0, 1.0 / s.extras()[1]) / s.extras()[0] + 2.0 * knot2);
      break;
  }
  const double t_lo = to_t(theta0);
  std::vector<double> forced;
  if (knot1 < upper) forced.push_back(to_t(knot1));
  if (knot2 < upper) forced.push_back(to_t(knot2));
  table_ = std::make_unique<InverseCdfTable>([this](double t) { return log_kernel_t(t); },
                                             make_knots(t_lo, t_hi, kTableKnots, forced), e_, upper_rate);

  // Z_K: analytic power-law piece below theta0, adaptive quadrature in t on
  // the pieces delimited by the indicator's knots.
  const double shift = table_->log_mass();
  auto f = [this, shift](double t) { return std::exp(log_kernel_t(t) - shift); };
  std::vector<double> bounds{t_lo};
  for (double k : forced) bounds.push_back(k);
  bounds.push_back(kInf);
  CompensatedSum total, err;
  total += std::exp(log_kernel_t(t_lo) - shift) / e_;
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    const QuadratureResult r = integrate(f, bounds[i], bounds[i + 1], 1e-10, 1e-12);
    total += r.value;
    err += r.error;
  }
  log_Z_ = shift + std::log(total.value());
  z_error_ = err.value() / total.value();
}

double AifaDensity::to_t(double theta) const {
  return cfg_.spec.bounded_support() ? logit(theta) : std::log(theta);
}

double AifaDensity::from_t_log(double t) const {
  if (!cfg_.spec.bounded_support()) return t;
  double lt, l1m;
  logit_parts(t, lt, l1m);
  return lt;
}

double AifaDensity::log_kernel(double theta) const {
  const RateMeasureSpec& s = cfg_.spec;
  const double S = indicator_value(cfg_.approx_indicator(), theta - cfg_.a / cfg_.K);
  const double d = s.discount();
  return (-1.0 + e_ - d * S) * std::log(theta) + (e_ - d) * s.log_g(theta) + s.log_h(theta);
}

// Kernel of the density of t, including the Jacobian.
double AifaDensity::log_kernel_t(double t) const {
  const RateMeasureSpec& s = cfg_.spec;
  const double d = s.discount();
  if (s.bounded_support()) {
    double lt, l1m;
    logit_parts(t, lt, l1m);
    const double theta = std::exp(lt);
    const double S = indicator_value(cfg_.approx_indicator(), theta - cfg_.a / cfg_.K);
    // theta^(e - d S) (1 - theta)^eta, Jacobian theta (1 - theta) folded in.
    return (e_ - d * S) * lt + s.eta() * l1m;
  }
  const double theta = std::exp(t);
  if (theta == kInf) return -kInf;
  const double S = indicator_value(cfg_.approx_indicator(), theta - cfg_.a / cfg_.K);
  return (e_ - d * S) * t + (e_ - d) * s.log_g(theta) + s.log_h(theta);
}

double AifaDensity::log_density(double theta) const {
  if (!(theta > 0.0) || theta > cfg_.spec.support_upper() || !std::isfinite(theta))
    throw DomainError("AIFA density: theta outside the support");
  return log_kernel(theta) - log_Z_;
}

double AifaDensity::sample_log(Rng& rng) const { return from_t_log(table_->quantile(rng.uniform())); }

double AifaDensity::sample(Rng& rng) const { return exp_positive(sample_log(rng)); }

double AifaDensity::sample_log_rejection(Rng& rng) const {
  const RateMeasureSpec& s = cfg_.spec;
  const double d = s.discount();
  const double knot1 = cfg_.a / cfg_.K;
  const double inv = std::max(1.0, cfg_.K / cfg_.a);
  double log_M = d * std::log(inv);
  if (s.family() == Family::BetaPrime) {
    const double m = std::max({1.0 + knot1 + cfg_.b_K(), 2.0 * cfg_.K / cfg_.a, 1.0 + cfg_.K / cfg_.a, 2.0});
    log_M = d * std::log(m);
  }
  const ApproxIndicator ind = cfg_.approx_indicator();
  for (int tries = 0; tries < 10000000; ++tries) {
    double lt = 0.0;
    switch (s.family()) {
      case Family::Beta: lt = rng.log_beta(e_, s.eta()).log_x; break;
      case Family::Gamma: lt = rng.log_gamma_variate(e_) - std::log(s.eta()); break;
      case Family::BetaPrime: lt = rng.log_gamma_variate(e_) - rng.log_gamma_variate(s.eta()); break;
      case Family::GeneralizedGamma: {
        const double q = s.extras()[1];
        lt = rng.log_gamma_variate(e_ / q) / q - std::log(s.extras()[0]);
        break;
      }
    }
    const double theta = std::exp(lt);
    const double S = indicator_value(ind, theta - knot1);
    double log_ratio = -d * S * lt;
    if (s.family() == Family::BetaPrime) log_ratio += d * std::log1p(theta);
    if (rng.log_uniform() < log_ratio - log_M) return lt;
  }
  throw NumericalError("AIFA rejection sampler: acceptance rate too low");
}

double AifaDensity::validate_table(Rng& rng, int draws) const {
  std::vector<double> x(draws), y(draws);
  for (auto& v : x) v = sample_log(rng);
  for (auto& v : y) v = sample_log_rejection(rng);
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t i = 0, j = 0;
  double ks = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    ks = std::max(ks, std::abs(static_cast<double>(i) / x.size() - static_cast<double>(j) / y.size()));
  }
  return ks;
}

double aifa_log_density(const AifaConfig& cfg, double theta) { return AifaDensity(cfg).log_density(theta); }

// ------------------------------------------------------------- closed forms

double ClosedFormLaw::log_density(double theta) const {
  if (!(theta > 0.0)) throw DomainError("closed-form density: theta must be positive");
  const auto& p = params;
  switch (kind) {
    case ClosedFormKind::Beta:
      if (theta >= 1.0) throw DomainError("closed-form density: theta outside (0, 1)");
      return (p[0] - 1.0) * std::log(theta) + (p[1] - 1.0) * std::log1p(-theta) - lbeta(p[0], p[1]);
    case ClosedFormKind::Gamma:
      return p[0] * std::log(p[1]) - lgam(p[0]) + (p[0] - 1.0) * std::log(theta) - p[1] * theta;
    case ClosedFormKind::BetaPrime:
      return (p[0] - 1.0) * std::log(theta) - (p[0] + p[1]) * std::log1p(theta) - lbeta(p[0], p[1]);
    case ClosedFormKind::GenGamma:
      return std::log(p[2]) - p[1] * std::log(p[0]) + (p[1] - 1.0) * std::log(theta) -
             std::pow(theta / p[0], p[2]) - lgam(p[1] / p[2]);
  }
  return 0.0;
}

double ClosedFormLaw::sample_log(Rng& rng) const {
  const auto& p = params;
  switch (kind) {
    case ClosedFormKind::Beta: return rng.log_beta(p[0], p[1]).log_x;
    case ClosedFormKind::Gamma: return rng.log_gamma_variate(p[0]) - std::log(p[1]);
    case ClosedFormKind::BetaPrime: return rng.log_gamma_variate(p[0]) - rng.log_gamma_variate(p[1]);
    case ClosedFormKind::GenGamma: return std::log(p[0]) + rng.log_gamma_variate(p[1] / p[2]) / p[2];
  }
  return 0.0;
}

std::string ClosedFormLaw::name() const {
  switch (kind) {
    case ClosedFormKind::Beta: return "Beta";
    case ClosedFormKind::Gamma: return "Gamma";
    case ClosedFormKind::BetaPrime: return "BetaPrime";
    case ClosedFormKind::GenGamma: return "GenGamma";
  }
  return "";
}

ClosedFormLaw aifa_closed_form_law(const RateMeasureSpec& spec, int K) {
  if (spec.discount() != 0.0) throw UnsupportedError("closed-form AIFA requires discount d = 0");
  if (K < 1) throw DomainError("AIFA: K must be at least 1");
  const double g = spec.mass();
  switch (spec.family()) {
    case Family::Beta: return {ClosedFormKind::Beta, {g * spec.alpha() / K, spec.alpha()}};
    case Family::Gamma: return {ClosedFormKind::Gamma, {g * spec.eta() / K, spec.eta()}};
    case Family::BetaPrime: return {ClosedFormKind::BetaPrime, {g * spec.eta() / K, spec.eta()}};
    case Family::GeneralizedGamma: {
      const double e1 = spec.extras()[0], e2 = spec.extras()[1];
      return {ClosedFormKind::GenGamma, {1.0 / e1, g * e1 * e2 / (K * std::tgamma(1.0 / e2)), e2}};
    }
  }
  throw DomainError("bad family");
}

// --------------------------------------------------------------------- BFRY

double bfry_log_density(double c, double alpha, double s) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("BFRY: alpha must lie in (0, 1)");
  if (!(c > 0.0)) throw DomainError("BFRY: c must be positive");
  if (!(s > 0.0)) throw DomainError("BFRY: s must be positive");
  const double kappa = std::pow(alpha / c, 1.0 / alpha);
  return std::log(c) - lgam(1.0 - alpha) - (alpha + 1.0) * std::log(s) + log1m_exp(-kappa * s);
}

BfrySampler::BfrySampler(double c, double alpha) : c_(c), alpha_(alpha) {
  bfry_log_density(c, alpha, 1.0);  // validates
  const double kappa = std::pow(alpha / c, 1.0 / alpha);
  const double t_lo = std::log(1e-10 / kappa), t_hi = std::log(50.0 / kappa);
  table_ = std::make_unique<InverseCdfTable>(
      [c, alpha](double t) { return bfry_log_density(c, alpha, std::exp(t)) + t; },
      make_knots(t_lo, t_hi, kTableKnots, {}), 1.0 - alpha, alpha);
}

double BfrySampler::sample_log(Rng& rng) const { return table_->quantile(rng.uniform()); }

// ------------------------------------------------------- WeightDistribution

std::string to_string(WeightKind k) {
  switch (k) {
    case WeightKind::AifaNumeric: return "aifa_numeric";
    case WeightKind::AifaClosedForm: return "aifa_closed_form";
    case WeightKind::Bondesson: return "bondesson";
    case WeightKind::BetaStickBreaking: return "beta_stick_breaking";
    case WeightKind::TSB: return "tsb";
    case WeightKind::FSD: return "fsd";
    case WeightKind::BFRY: return "bfry";
  }
  return "";
}

WeightKind weight_kind_from_string(const std::string& s) {
  for (WeightKind k : {WeightKind::AifaNumeric, WeightKind::AifaClosedForm, WeightKind::Bondesson,
                       WeightKind::BetaStickBreaking, WeightKind::TSB, WeightKind::FSD, WeightKind::BFRY})
    if (to_string(k) == s) return k;
  throw DomainError("unknown weight distribution kind '" + s + "'");
}

namespace {

void require_K(int K) {
  if (K < 1) throw DomainError("K must be at least 1");
}

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError(std::string(what) + " must be positive");
}

}  // namespace

WeightDistribution WeightDistribution::aifa_numeric(const AifaConfig& cfg) {
  WeightDistribution w;
  w.kind_ = WeightKind::AifaNumeric;
  w.K_ = cfg.K;
  w.aifa_ = std::make_shared<const AifaDensity>(cfg);
  w.params_ = cfg.to_json();
  return w;
}

WeightDistribution WeightDistribution::aifa_closed_form(const RateMeasureSpec& spec, int K) {
  WeightDistribution w;
  w.kind_ = WeightKind::AifaClosedForm;
  w.K_ = K;
  w.closed_ = std::make_shared<const ClosedFormLaw>(aifa_closed_form_law(spec, K));
  w.params_ = {{"spec", spec.to_json()}};
  return w;
}

WeightDistribution WeightDistribution::bondesson(double gamma, double alpha, int K) {
  require_K(K);
  require_positive(gamma, "gamma");
  if (!(alpha >= 1.0)) throw UnsupportedError("Bondesson representation requires alpha >= 1");
  WeightDistribution w;
  w.kind_ = WeightKind::Bondesson;
  w.K_ = K;
  w.p0_ = gamma;
  w.p1_ = alpha;
  w.params_ = {{"gamma", gamma}, {"alpha", alpha}};
  return w;
}

WeightDistribution WeightDistribution::beta_stick_breaking(double gamma, double alpha, int K) {
  require_K(K);
  require_positive(gamma, "gamma");
  require_positive(alpha, "alpha");
  WeightDistribution w;
  w.kind_ = WeightKind::BetaStickBreaking;
  w.K_ = K;
  w.p0_ = gamma;
  w.p1_ = alpha;
  w.params_ = {{"gamma", gamma}, {"alpha", alpha}};
  return w;
}

WeightDistribution WeightDistribution::tsb(double alpha, int K) {
  require_K(K);
  require_positive(alpha, "alpha");
  WeightDistribution w;
  w.kind_ = WeightKind::TSB;
  w.K_ = K;
  w.p1_ = alpha;
  w.params_ = {{"alpha", alpha}};
  return w;
}

WeightDistribution WeightDistribution::fsd(double gamma, int K) {
  require_K(K);
  require_positive(gamma, "gamma");
  WeightDistribution w;
  w.kind_ = WeightKind::FSD;
  w.K_ = K;
  w.p0_ = gamma;
  w.params_ = {{"gamma", gamma}};
  return w;
}

WeightDistribution WeightDistribution::bfry(double gamma, double d, int K) {
  require_K(K);
  require_positive(gamma, "gamma");
  WeightDistribution w;
  w.kind_ = WeightKind::BFRY;
  w.K_ = K;
  w.p0_ = gamma;
  w.p1_ = d;
  w.bfry_ = std::make_shared<const BfrySampler>(gamma / K, d);
  w.params_ = {{"gamma", gamma}, {"discount", d}};
  return w;
}

nlohmann::json WeightDistribution::to_json() const {
  return {{"kind", to_string(kind_)}, {"K", K_}, {"params", params_}};
}

WeightDistribution WeightDistribution::from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items())
    if (key != "kind" && key != "K" && key != "params")
      throw DomainError("weight distribution: unknown field '" + key + "'");
  const WeightKind kind = weight_kind_from_string(j.at("kind").get<std::string>());
  const int K = j.at("K").get<int>();
  const nlohmann::json& p = j.at("params");
  auto allow = [&](std::initializer_list<const char*> keys) {
    for (const auto& [key, _] : p.items()) {
      bool ok = false;
      for (const char* k : keys) ok = ok || key == k;
      if (!ok) throw DomainError("weight distribution: unknown parameter '" + key + "'");
    }
  };
  switch (kind) {
    case WeightKind::AifaNumeric: {
      nlohmann::json cfg = p;
      cfg["K"] = K;
      return aifa_numeric(AifaConfig::from_json(cfg));
    }
    case WeightKind::AifaClosedForm:
      allow({"spec"});
      return aifa_closed_form(RateMeasureSpec::from_json(p.at("spec")), K);
    case WeightKind::Bondesson:
      allow({"gamma", "alpha"});
      return bondesson(p.at("gamma").get<double>(), p.at("alpha").get<double>(), K);
    case WeightKind::BetaStickBreaking:
      allow({"gamma", "alpha"});
      return beta_stick_breaking(p.at("gamma").get<double>(), p.at("alpha").get<double>(), K);
    case WeightKind::TSB: allow({"alpha"}); return tsb(p.at("alpha").get<double>(), K);
    case WeightKind::FSD: allow({"gamma"}); return fsd(p.at("gamma").get<double>(), K);
    case WeightKind::BFRY:
      allow({"gamma", "discount"});
      return bfry(p.at("gamma").get<double>(), p.at("discount").get<double>(), K);
  }
  throw DomainError("weight distribution: bad kind");
}

std::vector<double> sample_log_weights(const WeightDistribution& dist, Rng& rng) {
  const int K = dist.K_;
  std::vector<double> out;
  switch (dist.kind_) {
    case WeightKind::AifaNumeric:
      out.resize(K);
      for (auto& v : out) v = dist.aifa_->sample_log(rng);
      break;
    case WeightKind::AifaClosedForm:
      out.resize(K);
      for (auto& v : out) v = dist.closed_->sample_log(rng);
      break;
    case WeightKind::Bondesson: {
      const double ga = dist.p0_ * dist.p1_;
      double arrival = 0.0;
      out.resize(K);
      for (auto& v : out) {
        arrival += rng.exponential();
        const double log_v = dist.p1_ == 1.0 ? 0.0 : rng.log_beta(1.0, dist.p1_ - 1.0).log_x;
        v = log_v - arrival / ga;
      }
      break;
    }
    case WeightKind::BetaStickBreaking:
      for (int i = 1; i <= K; ++i) {
        const std::uint64_t C = rng.poisson(dist.p0_);
        for (std::uint64_t j = 0; j < C; ++j) {
          double lw = 0.0;
          for (int l = 1; l < i; ++l) lw += rng.log_beta(1.0, dist.p1_).log1m_x;
          lw += rng.log_beta(1.0, dist.p1_).log_x;
          out.push_back(lw);
        }
      }
      break;
    case WeightKind::TSB: {
      out.resize(K);
      double rest = 0.0;  // log prod_{j<i} (1 - v_j)
      for (int i = 0; i < K; ++i) {
        if (i == K - 1) {
          out[i] = rest;
        } else {
          const auto lb = rng.log_beta(1.0, dist.p1_);
          out[i] = lb.log_x + rest;
          rest += lb.log1m_x;
        }
      }
      break;
    }
    case WeightKind::FSD: {
      out.resize(K);
      for (auto& v : out) v = rng.log_gamma_variate(dist.p0_ / K);
      const double lz = log_sum_exp(out);
      for (auto& v : out) v -= lz;
      break;
    }
    case WeightKind::BFRY:
      out.resize(K);
      for (auto& v : out) {
        const double ls = dist.bfry_->sample_log(rng);
        v = -std::log1p(std::exp(-ls));
      }
      break;
  }
  return out;
}

std::vector<double> sample_weights(const WeightDistribution& dist, Rng& rng) {
  std::vector<double> lw = sample_log_weights(dist, rng);
  for (auto& v : lw) v = exp_positive(v);
  return lw;
}

}  // namespace aifa
