#pragma once

#include <functional>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "aifa/measures.hpp"
#include "aifa/parallel.hpp"
#include "aifa/rng.hpp"

namespace aifa {

enum class LikelihoodFamily { BetaBernoulli, GammaPoisson, BetaNegBinomial };

std::string to_string(LikelihoodFamily f);

// Exponential-family CRM-likelihood pair with d = 0:
//   l(x | theta) = kappa(x) theta^phi(x) exp(<mu(theta), t(x)> - A(theta)).
// Bernoulli:  kappa = 1, phi = x, mu = log(1 - theta), t = 1 - x, A = 0
// Poisson:    kappa = 1/x!, phi = x, A = theta
// NegBin(r):  kappa = Gamma(x + r)/(x! Gamma(r)), phi = x, mu = r log(1 - theta), t = 1, A = 0
class ExpFamilyModel {
 public:
  static ExpFamilyModel beta_bernoulli(double gamma, double alpha);
  static ExpFamilyModel gamma_poisson(double gamma, double lambda);
  static ExpFamilyModel beta_negative_binomial(double gamma, double alpha, double r);

  LikelihoodFamily family() const { return family_; }
  const RateMeasureSpec& spec() const { return spec_; }
  double mass() const { return spec_.mass(); }
  // alpha (beta families) or lambda (gamma-Poisson)
  double concentration() const { return conc_; }
  double r() const { return r_; }
  // c = gamma * alpha or gamma * lambda
  double c() const { return mass() * conc_; }
  // largest count with positive probability (-1 = unbounded)
  int max_count() const { return family_ == LikelihoodFamily::BetaBernoulli ? 1 : -1; }

  double log_kappa(int x) const;
  double phi(int x) const { return x; }
  double log_likelihood(int x, double theta) const;

  nlohmann::json to_json() const;
  static ExpFamilyModel from_json(const nlohmann::json& j);

 private:
  ExpFamilyModel(LikelihoodFamily f, RateMeasureSpec s, double conc, double r);
  LikelihoodFamily family_;
  RateMeasureSpec spec_;
  double conc_;
  double r_;
};

// Predictive pmfs. `n` is the round being drawn (history length n - 1) and
// `A` the sum of the history counts.
double log_target_predictive_pmf(const ExpFamilyModel& m, int n, double A, int x);
double target_predictive_pmf(const ExpFamilyModel& m, int n, double A, int x);
double target_predictive_pmf(const ExpFamilyModel& m, std::span<const int> history, int x);
double log_approx_predictive_pmf(const ExpFamilyModel& m, int K, int n, double A, int x);
double approx_predictive_pmf(const ExpFamilyModel& m, int K, int n, double A, int x);
double approx_predictive_pmf(const ExpFamilyModel& m, int K, std::span<const int> history, int x);

// Poisson mean M_{n,x} of the number of new atoms of size x in round n.
double target_new_atom_rate(const ExpFamilyModel& m, int n, int x);
// sum over x >= 1 of M_{n,x}, closed form.
double target_new_atom_total(const ExpFamilyModel& m, int n);

int sample_target_predictive(const ExpFamilyModel& m, int n, double A, Rng& rng);
int sample_approx_predictive(const ExpFamilyModel& m, int K, int n, double A, Rng& rng);

// Trait counts, observation x instantiated atom, columns in order of first
// appearance; within a row new columns are ordered by descending count,
// then by draw order.
class FeatureAllocation {
 public:
  explicit FeatureAllocation(int rows = 0) : rows_(rows) {}

  int rows() const { return rows_; }
  int cols() const { return static_cast<int>(columns_.size()); }
  int at(int row, int col) const { return columns_[col][row]; }
  const std::vector<int>& column(int col) const { return columns_[col]; }
  void add_column(std::vector<int> counts);
  // first row with a nonzero entry in `col`
  int birth_row(int col) const;

  // Same allocation with rows reordered: new row i is old row perm[i].
  FeatureAllocation permute_rows(std::span<const int> perm) const;

  std::string to_csv() const;  // row,col,count triplets of nonzero entries
  nlohmann::json to_json() const;

 private:
  int rows_;
  std::vector<std::vector<int>> columns_;
};

struct AllocationSource {
  enum class Kind { Target, Aifa } kind = Kind::Target;
  int K = 0;
  static AllocationSource target() { return {}; }
  static AllocationSource aifa(int K) { return {Kind::Aifa, K}; }
};

FeatureAllocation simulate_allocation(const ExpFamilyModel& m, int N, AllocationSource src, Rng& rng);

// log probability of the allocation as an unlabeled multiset of columns under
// the target marginal process.
double log_target_allocation_probability(const ExpFamilyModel& m, const FeatureAllocation& f);

// ----------------------------------------------------------------- urns

inline constexpr int kFresh = -1;

struct UrnProbabilities {
  std::vector<double> existing;  // per block, in label order
  double fresh = 0.0;
};

// Block sizes of a label history whose labels are 0, 1, 2, ... in order of
// first appearance.
std::vector<int> block_counts(std::span<const int> labels);

UrnProbabilities dp_urn_probabilities(std::span<const int> counts, double alpha);
UrnProbabilities fsd_urn_probabilities(std::span<const int> counts, double alpha, int K);

// Next label given the history: an existing label or kFresh.
int dp_urn_step(std::span<const int> labels, double alpha, Rng& rng);
int fsd_urn_step(std::span<const int> labels, double alpha, int K, Rng& rng);

// ---------------------------------------------------------- Condition 1

struct ConditionConstants {
  double C1, C2, C3, C4, C5;
};

// Right-hand sides of the four inequalities, as functions of (n, K).
struct ConditionPreset {
  std::string name;
  std::function<double(int n)> rhs_total;                 // sum_x M_{n,x}
  std::function<double(int n, int K)> rhs_approx_total;   // sum_{x>=1} h~(x | 0)
  std::function<double(int n, int K)> rhs_old;            // sum_x |h - h~|
  std::function<double(int n, int K)> rhs_new;            // sum_x |M - K h~(x | 0)|
  std::function<bool(int n, int K)> new_applies;          // K-floor of inequality 4

  static ConditionPreset from_constants(const ConditionConstants& c);
  // Shipped constants for the three families.
  static ConditionPreset for_model(const ExpFamilyModel& m);
};

struct ConditionEntry {
  int inequality = 0;  // 1..4
  int n_worst = 0;
  int K = 0;
  double A_worst = 0;   // history sum at the worst point (inequality 3)
  double lhs = 0;
  double rhs = 0;
  double slack = 0;     // rhs - lhs at the tightest point (relative slack minimized)
  double rel_slack = 0;
  long checked = 0;
  long skipped = 0;     // (n, K) below the K-floor
  long failures = 0;
  bool pass = true;
};

struct ConditionReport {
  std::string preset;
  std::vector<ConditionEntry> entries;
  bool pass() const;
  nlohmann::json to_json() const;
};

struct ConditionOptions {
  double tail_tol = 1e-12;
  long max_terms = 200000;
  Execution exec = Execution::Parallel;
};

// History sums A >= 1 checked at round n for inequality 3; h is undefined
// for an all-zero history, which inequalities 2 and 4 cover.
std::vector<double> condition_history_grid(const ExpFamilyModel& m, int n);

ConditionReport check_condition_1(const ExpFamilyModel& m, const ConditionPreset& preset, int n_max,
                                  std::span<const int> K_set, const ConditionOptions& opt = {});
ConditionReport check_condition_1(const ExpFamilyModel& m, const ConditionConstants& c, int n_max,
                                  std::span<const int> K_set, const ConditionOptions& opt = {});

// The certified left-hand sides, exposed for testing.
struct CertifiedSum {
  double value;  // partial sum plus tail bound
  double tail;   // tail bound included in value
  long terms;
};
CertifiedSum condition_lhs_total(const ExpFamilyModel& m, int n, const ConditionOptions& opt = {});
CertifiedSum condition_lhs_approx_total(const ExpFamilyModel& m, int K, int n);
CertifiedSum condition_lhs_old(const ExpFamilyModel& m, int K, int n, double A, const ConditionOptions& opt = {});
CertifiedSum condition_lhs_new(const ExpFamilyModel& m, int K, int n, const ConditionOptions& opt = {});

}  // namespace aifa
