#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <json.hpp>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aifa/approximations.hpp"
#include "aifa/errors.hpp"
#include "aifa/parallel.hpp"
#include "aifa/rng.hpp"

namespace aifa {

// ------------------------------------------------------- distributions

// Finite list of outcomes with masses. A truncated distribution records the
// mass it leaves out as `deficit`, so masses sum to 1 - deficit.
template <class T>
class DiscreteDistribution {
 public:
  DiscreteDistribution() = default;
  // Outcomes must be distinct; they are stored sorted.
  DiscreteDistribution(std::vector<T> support, std::vector<double> masses, double deficit = 0.0) {
    if (support.size() != masses.size()) throw DomainError("support and masses differ in length");
    if (!(deficit >= 0.0 && deficit <= 1.0)) throw DomainError("deficit must lie in [0, 1]");
    std::map<T, double> m;
    double total = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (!(masses[i] >= 0.0)) throw DomainError("masses must be nonnegative");
      if (!m.emplace(support[i], masses[i]).second) throw DomainError("duplicate outcome");
      total += masses[i];
    }
    if (std::abs(total + deficit - 1.0) > 1e-12) throw DomainError("masses plus deficit must sum to 1");
    for (auto& [k, v] : m) {
      support_.push_back(k);
      masses_.push_back(v);
    }
    deficit_ = deficit;
  }

  const std::vector<T>& support() const { return support_; }
  const std::vector<double>& masses() const { return masses_; }
  double deficit() const { return deficit_; }
  double total_mass() const { return 1.0 - deficit_; }
  std::size_t size() const { return support_.size(); }
  double mass(const T& x) const {
    auto it = std::lower_bound(support_.begin(), support_.end(), x);
    return it != support_.end() && *it == x ? masses_[it - support_.begin()] : 0.0;
  }

 private:
  std::vector<T> support_;
  std::vector<double> masses_;
  double deficit_ = 0.0;
};

using CountDistribution = DiscreteDistribution<long>;
// Outcomes are set partitions encoded as restricted-growth strings.
using PartitionDistribution = DiscreteDistribution<std::vector<int>>;

// Total variation with its truncation interval: the exact distance lies in
// [lower, upper]; `value` is half the L1 distance on the stored supports.
struct TvResult {
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

template <class T>
TvResult tv_exact(const DiscreteDistribution<T>& p, const DiscreteDistribution<T>& q) {
  const auto& sp = p.support();
  const auto& sq = q.support();
  double l1 = 0.0, comp = 0.0;
  auto add = [&](double v) {  // Neumaier
    const double t = l1 + v;
    comp += std::abs(l1) >= std::abs(v) ? (l1 - t) + v : (v - t) + l1;
    l1 = t;
  };
  std::size_t i = 0, j = 0;
  while (i < sp.size() || j < sq.size()) {
    if (j == sq.size() || (i < sp.size() && sp[i] < sq[j])) {
      add(p.masses()[i++]);
    } else if (i == sp.size() || sq[j] < sp[i]) {
      add(q.masses()[j++]);
    } else {
      add(std::abs(p.masses()[i++] - q.masses()[j++]));
    }
  }
  TvResult r;
  r.value = std::min(1.0, 0.5 * (l1 + comp));
  r.lower = std::min(1.0, r.value + 0.5 * std::abs(p.deficit() - q.deficit()));
  r.upper = std::min(1.0, r.value + 0.5 * (p.deficit() + q.deficit()));
  return r;
}

// Poisson(lambda) on {0, ..., x_max} with x_max the first point where the
// certified upper tail exp(-x^2 / (2 (lambda + x))) drops below `tail_tol`.
CountDistribution truncated_poisson(double lambda, double tail_tol = 1e-12);
CountDistribution binomial_distribution(long n, double p);

// d_TV(Poisson(gamma), Binomial(K, q)), q = (gamma/K) / (1 + gamma/K).
TvResult tv_binom_poisson(int K, double gamma);

// ---------------------------------------------------------- evaluators

// C(N, alpha) = sum_{n=1}^N alpha / (n - 1 + alpha)
double growth_function(long N, double alpha);
// alpha (ln N - digamma(alpha) - 1)
double growth_function_lower(long N, double alpha);

double bondesson_tfa_bound(double N, int K, double gamma, double alpha);
double tsb_dp_bound(double N, int K, double alpha);
double binom_poisson_lower_constant(double gamma);
double lecam_upper(double n, double p_sum);
double poisson_tail_upper(double lambda, double x);
double poisson_tail_lower(double lambda, double x);
double chernoff_upper(double mu, double delta);
double chernoff_lower(double mu, double delta);
double dp_fsd_two_sample_gap(double alpha, int K);

// Named evaluator lookup for tables: value of `name` at `args`.
double evaluate_bound(const std::string& name, std::span<const double> args);
std::vector<std::string> bound_names();

// -------------------------------------------------------------- EPPFs

class PartitionComposition {
 public:
  // Block sizes in any order; stored descending.
  explicit PartitionComposition(std::vector<int> sizes);
  const std::vector<int>& sizes() const { return sizes_; }
  int blocks() const { return static_cast<int>(sizes_.size()); }
  int N() const { return N_; }
  // number of set partitions of {1..N} with these block sizes
  double set_partition_count() const;
  // Restricted-growth string: blocks opened in order, then block i's
  // remaining members appended block by block.
  std::vector<int> canonical_sequence() const;
  std::string to_string() const;  // e.g. "2+1+1"
  bool operator==(const PartitionComposition&) const = default;

 private:
  std::vector<int> sizes_;
  int N_ = 0;
};

// Integer partitions of N, each as a composition.
std::vector<PartitionComposition> compositions(int N);
// All set partitions of {0..N-1} as restricted-growth strings.
std::vector<std::vector<int>> enumerate_set_partitions(int N);
// Relabel a label sequence to first-appearance order.
std::vector<int> canonical_labels(std::span<const int> labels);
PartitionComposition composition_of(std::span<const int> labels);

struct EppfSource {
  enum class Kind { DP, FSD, NormalizedAifa } kind = Kind::DP;
  double alpha = 1.0;  // DP concentration, or FSD gamma
  int K = 0;
  std::vector<WeightDistribution> weights;  // NormalizedAifa: one element

  static EppfSource dp(double alpha);
  static EppfSource fsd(double gamma, int K);
  static EppfSource normalized(WeightDistribution w);
  std::string name() const;
};

// Probability of observing `labels` (any labelling; only the induced
// partition and order matter) under the urn of a DP or FSD source.
double sequence_probability(const EppfSource& src, std::span<const int> labels);

struct EppfMethod {
  enum class Kind { ExactSequential, MonteCarlo } kind = Kind::ExactSequential;
  long replicates = 0;
  std::uint64_t seed = 0;
  Execution exec = Execution::Parallel;
  static EppfMethod exact() { return {}; }
  static EppfMethod monte_carlo(long reps, std::uint64_t seed, Execution exec = Execution::Parallel) {
    return {Kind::MonteCarlo, reps, seed, exec};
  }
};

struct EppfResult {
  double value = 0.0;
  double std_error = 0.0;  // 0 for exact results
  long hits = 0;           // Monte Carlo: samples with the target composition
  bool wide_interval = false;  // Monte Carlo resolved fewer than 10 hits
  std::string warning;
};

EppfResult eppf(const EppfSource& src, const PartitionComposition& comp, const EppfMethod& method = {});

struct EppfConvergenceRow {
  int K;
  std::string composition;
  double p_K, p_target, abs_gap;
};
// FSD(alpha, K) against DP(alpha) for every composition of N.
std::vector<EppfConvergenceRow> eppf_convergence(double alpha, int N, std::span<const int> Ks);
// Least-squares slope of log y on log x.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace aifa
