#pragma once

#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "aifa/inverse_cdf.hpp"
#include "aifa/measures.hpp"
#include "aifa/rng.hpp"

namespace aifa {

enum class BandwidthRule { InverseK, InverseSqrtK };

struct AifaConfig {
  RateMeasureSpec spec;
  int K = 1;
  double a = 1.0;
  BandwidthRule bandwidth = BandwidthRule::InverseK;
  IndicatorKind indicator = IndicatorKind::Smoothed;

  double b_K() const;
  ApproxIndicator approx_indicator() const { return {indicator, b_K()}; }
  void validate() const;

  nlohmann::json to_json() const;
  static AifaConfig from_json(const nlohmann::json& j);
};

// Normalized AIFA atom-size density
//   nu_K(theta) = theta^(-1 + c/K - d S_{b_K}(theta - a/K)) g(theta)^(c/K - d) h(theta) / Z_K
// with Z_K from adaptive quadrature and an inverse-CDF table for sampling.
class AifaDensity {
 public:
  explicit AifaDensity(AifaConfig cfg);
  AifaDensity(const AifaDensity&) = delete;
  AifaDensity& operator=(const AifaDensity&) = delete;

  const AifaConfig& config() const { return cfg_; }
  double c() const { return c_; }
  double log_normalizer() const { return log_Z_; }
  double quadrature_error() const { return z_error_; }

  // Unnormalized log density (without -log Z_K).
  double log_kernel(double theta) const;
  double log_density(double theta) const;

  double sample_log(Rng& rng) const;
  double sample(Rng& rng) const;

  // Exact envelope-rejection sampler used to validate the table.
  double sample_log_rejection(Rng& rng) const;

  // Two-sample Kolmogorov-Smirnov statistic between `draws` table draws and
  // `draws` rejection draws.
  double validate_table(Rng& rng, int draws = 10000) const;

 private:
  double to_t(double theta) const;
  double from_t_log(double t) const;  // log theta
  double log_kernel_t(double t) const;

  AifaConfig cfg_;
  double c_;
  double e_;  // c / K
  double log_Z_;
  double z_error_;
  std::unique_ptr<InverseCdfTable> table_;
};

double aifa_log_density(const AifaConfig& cfg, double theta);

enum class ClosedFormKind { Beta, Gamma, BetaPrime, GenGamma };

// Named exponential-family law of a d = 0 AIFA.
//   Beta(p0, p1), Gamma(shape p0, rate p1), BetaPrime(p0, p1),
//   GenGamma(scale p0, p1, p2) with density (p2 / p0^p1) theta^(p1-1) exp(-(theta/p0)^p2) / Gamma(p1/p2)
struct ClosedFormLaw {
  ClosedFormKind kind;
  std::vector<double> params;

  double log_density(double theta) const;
  double sample_log(Rng& rng) const;
  std::string name() const;
};

ClosedFormLaw aifa_closed_form_law(const RateMeasureSpec& spec, int K);

// Two-parameter BFRY(c, alpha):
//   (c / Gamma(1-alpha)) s^(-alpha-1) (1 - exp(-(alpha/c)^(1/alpha) s))
double bfry_log_density(double c, double alpha, double s);

class BfrySampler {
 public:
  BfrySampler(double c, double alpha);
  double sample_log(Rng& rng) const;

 private:
  double c_, alpha_;
  std::unique_ptr<InverseCdfTable> table_;
};

enum class WeightKind { AifaNumeric, AifaClosedForm, Bondesson, BetaStickBreaking, TSB, FSD, BFRY };

std::string to_string(WeightKind k);
WeightKind weight_kind_from_string(const std::string& s);

// A finite-approximation atom-size law. Copies share the (immutable)
// precomputed tables.
class WeightDistribution {
 public:
  static WeightDistribution aifa_numeric(const AifaConfig& cfg);
  static WeightDistribution aifa_closed_form(const RateMeasureSpec& spec, int K);
  static WeightDistribution bondesson(double gamma, double alpha, int K);
  // K rounds of the beta stick-breaking representation of BP(gamma, alpha).
  static WeightDistribution beta_stick_breaking(double gamma, double alpha, int K);
  static WeightDistribution tsb(double alpha, int K);
  static WeightDistribution fsd(double gamma, int K);
  // Weights J = S/(S+1), S ~ BFRY(gamma/K, d).
  static WeightDistribution bfry(double gamma, double d, int K);

  WeightKind kind() const { return kind_; }
  int K() const { return K_; }
  const nlohmann::json& params() const { return params_; }
  const AifaDensity* aifa_density() const { return aifa_.get(); }
  const ClosedFormLaw* closed_form() const { return closed_.get(); }

  nlohmann::json to_json() const;
  static WeightDistribution from_json(const nlohmann::json& j);

 private:
  friend std::vector<double> sample_log_weights(const WeightDistribution&, Rng&);
  WeightKind kind_;
  int K_ = 0;
  nlohmann::json params_;
  double p0_ = 0, p1_ = 0;
  std::shared_ptr<const AifaDensity> aifa_;
  std::shared_ptr<const ClosedFormLaw> closed_;
  std::shared_ptr<const BfrySampler> bfry_;
};

// Log weights; exact even where the weights underflow.
std::vector<double> sample_log_weights(const WeightDistribution& dist, Rng& rng);
// Weights, clamped below at the smallest positive normal double.
std::vector<double> sample_weights(const WeightDistribution& dist, Rng& rng);

}  // namespace aifa
