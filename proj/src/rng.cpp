#include "aifa/rng.hpp"

#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <cmath>

#include "aifa/errors.hpp"
#include "aifa/numeric.hpp"

namespace aifa {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 1));
}

Rng Rng::split(std::uint64_t stream) { return Rng(derive_seed(engine_(), stream)); }

double Rng::uniform() {
  // 53 random bits, shifted by half a unit so 0 and 1 are excluded.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::log_uniform() { return std::log(uniform()); }

double Rng::normal() {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

double Rng::exponential() { return -log_uniform(); }

double Rng::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) throw DomainError("gamma: shape and rate must be positive");
  if (shape < 1.0) return std::exp(log_gamma_variate(shape)) / rate;
  boost::random::gamma_distribution<double> dist(shape, 1.0);
  return dist(engine_) / rate;
}

double Rng::log_gamma_variate(double shape) {
  if (!(shape > 0.0)) throw DomainError("gamma: shape must be positive");
  if (shape >= 1.0) {
    boost::random::gamma_distribution<double> dist(shape, 1.0);
    return std::log(dist(engine_));
  }
  // G(a) = G(a + 1) * U^(1/a)
  boost::random::gamma_distribution<double> dist(shape + 1.0, 1.0);
  const double g = dist(engine_);
  return std::log(g) + log_uniform() / shape;
}

double Rng::beta(double a, double b) {
  const LogBeta lb = log_beta(a, b);
  return std::exp(lb.log_x);
}

Rng::LogBeta Rng::log_beta(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("beta: shapes must be positive");
  const double lx = log_gamma_variate(a);
  const double ly = log_gamma_variate(b);
  const double lz = log_add_exp(lx, ly);
  return {lx - lz, ly - lz};
}

std::uint64_t Rng::poisson(double mean) {
  if (!(mean >= 0.0)) throw DomainError("poisson: mean must be nonnegative");
  if (mean == 0.0) return 0;
  boost::random::poisson_distribution<std::uint64_t, double> dist(mean);
  return dist(engine_);
}

}  // namespace aifa
