#pragma once

#include <cstdint>
#include <random>

namespace aifa {

std::uint64_t splitmix64(std::uint64_t x);

// Seed of stream `stream` under master seed `master`:
//   derive_seed(m, s) = splitmix64(m ^ splitmix64(s + 1))
// Streams are replicates, chains or per-atom substreams.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// Random source owned by exactly one caller at a time.
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  engine_type& engine() { return engine_; }

  // Child generator for stream `stream`, seeded from this generator's state.
  Rng split(std::uint64_t stream);

  double uniform();      // open interval (0, 1)
  double log_uniform();  // log of uniform()
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double exponential();
  // Gamma(shape, rate).
  double gamma(double shape, double rate = 1.0);
  // log of a Gamma(shape, 1) draw, accurate for tiny shapes.
  double log_gamma_variate(double shape);
  double beta(double a, double b);
  struct LogBeta {
    double log_x;
    double log1m_x;
  };
  // log X and log(1 - X) for X ~ Beta(a, b), valid when X underflows.
  LogBeta log_beta(double a, double b);
  std::uint64_t poisson(double mean);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  engine_type engine_;
};

}  // namespace aifa
