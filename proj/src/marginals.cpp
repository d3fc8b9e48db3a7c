#include "aifa/marginals.hpp"

#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "aifa/errors.hpp"
#include "aifa/numeric.hpp"

namespace aifa {

namespace {

double lgam(double x) { return boost::math::lgamma(x); }
double lbeta(double a, double b) { return lgam(a) + lgam(b) - lgam(a + b); }

// Predictive pmf of a count given a history with sum `s` (A, or A + c/K for
// the approximation), evaluated sequentially through p(x+1)/p(x).
struct CountPmf {
  LikelihoodFamily fam;
  double s;      // effective history sum
  double extra;  // c/K for the beta-Bernoulli approximation denominator, else 0
  int n;
  double conc, r;

  double log_p0() const {
    if (s == 0.0) return 0.0;  // point mass at 0
    switch (fam) {
      case LikelihoodFamily::BetaBernoulli: return std::log1p(-p1());
      case LikelihoodFamily::GammaPoisson: return s * std::log1p(-1.0 / (conc + n));
      case LikelihoodFamily::BetaNegBinomial: return lbeta(s, r * n + conc) - lbeta(s, r * (n - 1) + conc);
    }
    return 0.0;
  }
  double p1() const { return s / (n - 1 + conc + extra); }
  // p(x+1) / p(x)
  double ratio(int x) const {
    if (s == 0.0) return 0.0;
    switch (fam) {
      case LikelihoodFamily::BetaBernoulli: return x == 0 ? p1() / (1.0 - p1()) : 0.0;
      case LikelihoodFamily::GammaPoisson: return (s + x) / (x + 1.0) / (conc + n);
      case LikelihoodFamily::BetaNegBinomial: return (x + r) / (x + 1.0) * (s + x) / (s + x + r * n + conc);
    }
    return 0.0;
  }
  // sup of ratio(y) over y >= x (geometric majorant), < 1 for gamma-Poisson
  double ratio_sup(int x) const {
    if (fam != LikelihoodFamily::GammaPoisson) return 1.0;
    const double p = 1.0 / (conc + n);
    return s >= 1.0 ? ratio(x) : p;
  }
  double log_pmf(int x) const {
    if (x < 0) return -kInf;
    if (s == 0.0) return x == 0 ? 0.0 : -kInf;
    switch (fam) {
      case LikelihoodFamily::BetaBernoulli:
        if (x > 1) return -kInf;
        return x == 1 ? std::log(p1()) : std::log1p(-p1());
      case LikelihoodFamily::GammaPoisson: {
        const double p = 1.0 / (conc + n);
        return lgam(s + x) - lgam(s) - lgam(x + 1.0) + x * std::log(p) + s * std::log1p(-p);
      }
      case LikelihoodFamily::BetaNegBinomial:
        return lgam(x + r) - lgam(x + 1.0) - lgam(r) + lbeta(s + x, r * n + conc) - lbeta(s, r * (n - 1) + conc);
    }
    return -kInf;
  }
};

CountPmf target_pmf(const ExpFamilyModel& m, int n, double A) {
  return {m.family(), A, 0.0, n, m.concentration(), m.r()};
}

CountPmf approx_pmf(const ExpFamilyModel& m, int K, int n, double A) {
  const double eps = m.c() / K;
  const double extra = m.family() == LikelihoodFamily::BetaBernoulli ? eps : 0.0;
  return {m.family(), A + eps, extra, n, m.concentration(), m.r()};
}

// Sequential M_{n,x}, x = 1, 2, ...
struct NewAtomRates {
  const ExpFamilyModel& m;
  int n;
  double first() const {
    const double c = m.c(), a = m.concentration();
    switch (m.family()) {
      case LikelihoodFamily::BetaBernoulli: return c / (a - 1 + n);
      case LikelihoodFamily::GammaPoisson: return c / (a + n);
      case LikelihoodFamily::BetaNegBinomial: return c * m.r() / (m.r() * n + a);
    }
    return 0.0;
  }
  // M_{x+1} / M_x
  double ratio(int x) const {
    const double a = m.concentration(), r = m.r();
    switch (m.family()) {
      case LikelihoodFamily::BetaBernoulli: return 0.0;
      case LikelihoodFamily::GammaPoisson: return x / ((x + 1.0) * (a + n));
      case LikelihoodFamily::BetaNegBinomial: return (x + r) / (x + 1.0) * x / (x + r * n + a);
    }
    return 0.0;
  }
};

void check_round(int n) {
  if (n < 1) throw DomainError("round n must be at least 1");
}

void check_count(const ExpFamilyModel& m, double A, int n) {
  if (A < 0) throw DomainError("history sum must be nonnegative");
  if (m.family() == LikelihoodFamily::BetaBernoulli && A > n - 1)
    throw DomainError("beta-Bernoulli history sum exceeds its length");
}

// Bound on sum_{y > x} t(y) for terms with
//   t(y+1)/t(y) = (y+r)/(y+1) * (s+y)/(s+y+b),  b >= 1,
// from log t(y+1)/t(y) <= -p/(y+s+b) and the majorant (y+s+b+1)^-p.
double power_tail(double t_x, long x, double s, double b, double r) {
  const double p = b - std::max(0.0, r - 1.0) * (x + s + b) / (x + 1.0);
  if (!(p > 1.0)) return kInf;
  return t_x * (x + s + b + 1.0) / (p - 1.0);
}

int sample_pmf(const CountPmf& pmf, Rng& rng) {
  const double u = rng.uniform();
  double p = std::exp(pmf.log_p0());
  CompensatedSum cdf;
  cdf += p;
  int x = 0;
  while (u > cdf.value()) {
    const double next = p * pmf.ratio(x);
    if (next == 0.0 || x > 100000000) break;
    p = next;
    ++x;
    cdf += p;
  }
  return x;
}

}  // namespace

std::string to_string(LikelihoodFamily f) {
  switch (f) {
    case LikelihoodFamily::BetaBernoulli: return "beta_bernoulli";
    case LikelihoodFamily::GammaPoisson: return "gamma_poisson";
    case LikelihoodFamily::BetaNegBinomial: return "beta_negative_binomial";
  }
  return "";
}

ExpFamilyModel::ExpFamilyModel(LikelihoodFamily f, RateMeasureSpec s, double conc, double r)
    : family_(f), spec_(std::move(s)), conc_(conc), r_(r) {}

ExpFamilyModel ExpFamilyModel::beta_bernoulli(double gamma, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("beta-Bernoulli: alpha must be positive");
  return {LikelihoodFamily::BetaBernoulli, RateMeasureSpec::beta(gamma, alpha), alpha, 0.0};
}

ExpFamilyModel ExpFamilyModel::gamma_poisson(double gamma, double lambda) {
  return {LikelihoodFamily::GammaPoisson, RateMeasureSpec::gamma_process(gamma, lambda), lambda, 0.0};
}

ExpFamilyModel ExpFamilyModel::beta_negative_binomial(double gamma, double alpha, double r) {
  if (!(alpha > 1.0)) throw DomainError("beta-negative binomial: alpha must exceed 1");
  if (!(r > 0.0)) throw DomainError("beta-negative binomial: r must be positive");
  return {LikelihoodFamily::BetaNegBinomial, RateMeasureSpec::beta(gamma, alpha), alpha, r};
}

double ExpFamilyModel::log_kappa(int x) const {
  if (x < 0) throw DomainError("counts are nonnegative");
  switch (family_) {
    case LikelihoodFamily::BetaBernoulli: return 0.0;
    case LikelihoodFamily::GammaPoisson: return -lgam(x + 1.0);
    case LikelihoodFamily::BetaNegBinomial: return lgam(x + r_) - lgam(x + 1.0) - lgam(r_);
  }
  return 0.0;
}

double ExpFamilyModel::log_likelihood(int x, double theta) const {
  if (x < 0) return -kInf;
  switch (family_) {
    case LikelihoodFamily::BetaBernoulli:
      if (x > 1) return -kInf;
      return x == 1 ? std::log(theta) : std::log1p(-theta);
    case LikelihoodFamily::GammaPoisson: return log_kappa(x) + x * std::log(theta) - theta;
    case LikelihoodFamily::BetaNegBinomial: return log_kappa(x) + x * std::log(theta) + r_ * std::log1p(-theta);
  }
  return -kInf;
}

nlohmann::json ExpFamilyModel::to_json() const {
  nlohmann::json j{{"family", to_string(family_)}, {"gamma", mass()}};
  if (family_ == LikelihoodFamily::GammaPoisson)
    j["lambda"] = conc_;
  else
    j["alpha"] = conc_;
  if (family_ == LikelihoodFamily::BetaNegBinomial) j["r"] = r_;
  return j;
}

ExpFamilyModel ExpFamilyModel::from_json(const nlohmann::json& j) {
  const std::string f = j.at("family").get<std::string>();
  auto allow = [&](std::initializer_list<const char*> keys) {
    for (const auto& [key, _] : j.items()) {
      bool ok = false;
      for (const char* k : keys) ok = ok || key == k;
      if (!ok) throw DomainError("model: unknown field '" + key + "'");
    }
  };
  if (f == "beta_bernoulli") {
    allow({"family", "gamma", "alpha"});
    return beta_bernoulli(j.at("gamma").get<double>(), j.at("alpha").get<double>());
  }
  if (f == "gamma_poisson") {
    allow({"family", "gamma", "lambda"});
    return gamma_poisson(j.at("gamma").get<double>(), j.at("lambda").get<double>());
  }
  if (f == "beta_negative_binomial") {
    allow({"family", "gamma", "alpha", "r"});
    return beta_negative_binomial(j.at("gamma").get<double>(), j.at("alpha").get<double>(), j.at("r").get<double>());
  }
  throw DomainError("model: unknown family '" + f + "'");
}

// ------------------------------------------------------------ predictive

double log_target_predictive_pmf(const ExpFamilyModel& m, int n, double A, int x) {
  check_round(n);
  check_count(m, A, n);
  if (A == 0.0) throw DomainError("target predictive: all-zero history (atom not instantiated)");
  return target_pmf(m, n, A).log_pmf(x);
}

double target_predictive_pmf(const ExpFamilyModel& m, int n, double A, int x) {
  return std::exp(log_target_predictive_pmf(m, n, A, x));
}

double target_predictive_pmf(const ExpFamilyModel& m, std::span<const int> history, int x) {
  const double A = std::accumulate(history.begin(), history.end(), 0.0);
  for (int h : history)
    if (h < 0 || (m.max_count() >= 0 && h > m.max_count())) throw DomainError("invalid history count");
  return target_predictive_pmf(m, static_cast<int>(history.size()) + 1, A, x);
}

double log_approx_predictive_pmf(const ExpFamilyModel& m, int K, int n, double A, int x) {
  check_round(n);
  check_count(m, A, n);
  if (K < 1) throw DomainError("K must be at least 1");
  return approx_pmf(m, K, n, A).log_pmf(x);
}

double approx_predictive_pmf(const ExpFamilyModel& m, int K, int n, double A, int x) {
  return std::exp(log_approx_predictive_pmf(m, K, n, A, x));
}

double approx_predictive_pmf(const ExpFamilyModel& m, int K, std::span<const int> history, int x) {
  const double A = std::accumulate(history.begin(), history.end(), 0.0);
  for (int h : history)
    if (h < 0 || (m.max_count() >= 0 && h > m.max_count())) throw DomainError("invalid history count");
  return approx_predictive_pmf(m, K, static_cast<int>(history.size()) + 1, A, x);
}

double target_new_atom_rate(const ExpFamilyModel& m, int n, int x) {
  check_round(n);
  if (x < 1) throw DomainError("new-atom rate needs x >= 1");
  const double c = m.c(), a = m.concentration();
  switch (m.family()) {
    case LikelihoodFamily::BetaBernoulli: return x == 1 ? c / (a - 1 + n) : 0.0;
    case LikelihoodFamily::GammaPoisson: return c / (x * std::pow(a + n, x));
    case LikelihoodFamily::BetaNegBinomial: return c * std::exp(m.log_kappa(x) + lbeta(x, m.r() * n + a));
  }
  return 0.0;
}

double target_new_atom_total(const ExpFamilyModel& m, int n) {
  check_round(n);
  const double c = m.c(), a = m.concentration();
  switch (m.family()) {
    case LikelihoodFamily::BetaBernoulli: return c / (a - 1 + n);
    case LikelihoodFamily::GammaPoisson: return -c * std::log1p(-1.0 / (a + n));
    case LikelihoodFamily::BetaNegBinomial: {
      const double r = m.r();
      return c * (boost::math::digamma(r * n + a) - boost::math::digamma(r * (n - 1) + a));
    }
  }
  return 0.0;
}

int sample_target_predictive(const ExpFamilyModel& m, int n, double A, Rng& rng) {
  check_round(n);
  check_count(m, A, n);
  if (A == 0.0) throw DomainError("target predictive: all-zero history (atom not instantiated)");
  return sample_pmf(target_pmf(m, n, A), rng);
}

int sample_approx_predictive(const ExpFamilyModel& m, int K, int n, double A, Rng& rng) {
  check_round(n);
  check_count(m, A, n);
  return sample_pmf(approx_pmf(m, K, n, A), rng);
}

// ------------------------------------------------------ FeatureAllocation

void FeatureAllocation::add_column(std::vector<int> counts) {
  if (static_cast<int>(counts.size()) != rows_) throw DomainError("column length must equal the row count");
  if (std::all_of(counts.begin(), counts.end(), [](int v) { return v == 0; }))
    throw DomainError("columns must have a nonzero entry");
  columns_.push_back(std::move(counts));
}

int FeatureAllocation::birth_row(int col) const {
  const auto& c = columns_[col];
  return static_cast<int>(std::find_if(c.begin(), c.end(), [](int v) { return v != 0; }) - c.begin());
}

FeatureAllocation FeatureAllocation::permute_rows(std::span<const int> perm) const {
  if (static_cast<int>(perm.size()) != rows_) throw DomainError("permutation size mismatch");
  std::vector<std::vector<int>> cols;
  for (const auto& c : columns_) {
    std::vector<int> p(rows_);
    for (int i = 0; i < rows_; ++i) p[i] = c[perm[i]];
    cols.push_back(std::move(p));
  }
  // restore first-appearance order: birth row, then descending count at birth
  std::vector<int> idx(cols.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto birth = [&](int j) {
    return static_cast<int>(std::find_if(cols[j].begin(), cols[j].end(), [](int v) { return v != 0; }) -
                            cols[j].begin());
  };
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    const int ba = birth(a), bb = birth(b);
    if (ba != bb) return ba < bb;
    return cols[a][ba] > cols[b][bb];
  });
  FeatureAllocation out(rows_);
  for (int j : idx) out.add_column(cols[j]);
  return out;
}

std::string FeatureAllocation::to_csv() const {
  std::ostringstream os;
  os << "row,col,count\n";
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols(); ++j)
      if (columns_[j][i] != 0) os << i << ',' << j << ',' << columns_[j][i] << '\n';
  return os.str();
}

nlohmann::json FeatureAllocation::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < rows_; ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (int j = 0; j < cols(); ++j) r.push_back(columns_[j][i]);
    rows.push_back(r);
  }
  return {{"rows", rows_}, {"cols", cols()}, {"counts", rows}};
}

FeatureAllocation simulate_allocation(const ExpFamilyModel& m, int N, AllocationSource src, Rng& rng) {
  if (N < 1) throw DomainError("simulate_allocation: N must be at least 1");
  if (src.kind == AllocationSource::Kind::Aifa && src.K < 1) throw DomainError("simulate_allocation: K >= 1");
  std::vector<std::vector<int>> cols;
  std::vector<double> sums;
  for (int n = 1; n <= N; ++n) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const int x = src.kind == AllocationSource::Kind::Target ? sample_target_predictive(m, n, sums[j], rng)
                                                               : sample_approx_predictive(m, src.K, n, sums[j], rng);
      cols[j][n - 1] = x;
      sums[j] += x;
    }
    std::vector<int> fresh;  // counts of new atoms, in draw order
    if (src.kind == AllocationSource::Kind::Target) {
      const NewAtomRates rates{m, n};
      const double total = target_new_atom_total(m, n);
      CompensatedSum used;
      double M = rates.first();
      for (int x = 1;; ++x) {
        const std::uint64_t k = rng.poisson(M);
        for (std::uint64_t i = 0; i < k; ++i) fresh.push_back(x);
        used += M;
        if (total - used.value() < 1e-12 || m.max_count() == x) break;
        M *= rates.ratio(x);
        if (M == 0.0) break;
      }
    } else {
      const int dormant = src.K - static_cast<int>(cols.size());
      for (int i = 0; i < dormant; ++i) {
        const int x = sample_approx_predictive(m, src.K, n, 0.0, rng);
        if (x > 0) fresh.push_back(x);
      }
    }
    std::stable_sort(fresh.begin(), fresh.end(), std::greater<int>());
    for (int x : fresh) {
      std::vector<int> c(N, 0);
      c[n - 1] = x;
      cols.push_back(std::move(c));
      sums.push_back(x);
    }
  }
  FeatureAllocation out(N);
  for (auto& c : cols) out.add_column(std::move(c));
  return out;
}

double log_target_allocation_probability(const ExpFamilyModel& m, const FeatureAllocation& f) {
  CompensatedSum lp;
  const int N = f.rows();
  // new atoms: prod_x Poisson(c_{n,x}; M_{n,x}) without the 1/c! factors,
  // which cancel against the orderings of identical-birth atoms
  std::vector<std::map<int, int>> births(N);
  for (int j = 0; j < f.cols(); ++j) {
    const int b = f.birth_row(j);
    births[b][f.at(b, j)] += 1;
  }
  for (int n = 1; n <= N; ++n) {
    lp += -target_new_atom_total(m, n);
    for (const auto& [x, c] : births[n - 1]) lp += c * std::log(target_new_atom_rate(m, n, x));
  }
  for (int j = 0; j < f.cols(); ++j) {
    double A = 0;
    const int b = f.birth_row(j);
    A = f.at(b, j);
    for (int n = b + 2; n <= N; ++n) {
      lp += log_target_predictive_pmf(m, n, A, f.at(n - 1, j));
      A += f.at(n - 1, j);
    }
  }
  // identical columns are indistinguishable
  std::map<std::vector<int>, int> mult;
  for (int j = 0; j < f.cols(); ++j) mult[f.column(j)] += 1;
  for (const auto& [_, k] : mult) lp += -lgam(k + 1.0);
  return lp.value();
}

// ------------------------------------------------------------------- urns

std::vector<int> block_counts(std::span<const int> labels) {
  std::vector<int> counts;
  for (int l : labels) {
    if (l < 0 || l > static_cast<int>(counts.size())) throw DomainError("labels must be in first-appearance order");
    if (l == static_cast<int>(counts.size())) counts.push_back(0);
    counts[l] += 1;
  }
  return counts;
}

UrnProbabilities dp_urn_probabilities(std::span<const int> counts, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("DP urn: alpha must be positive");
  const double n1 = std::accumulate(counts.begin(), counts.end(), 0.0);
  UrnProbabilities p;
  for (int c : counts) p.existing.push_back(c / (n1 + alpha));
  p.fresh = alpha / (n1 + alpha);
  return p;
}

UrnProbabilities fsd_urn_probabilities(std::span<const int> counts, double alpha, int K) {
  if (!(alpha > 0.0)) throw DomainError("FSD urn: alpha must be positive");
  if (K < 1) throw DomainError("FSD urn: K must be at least 1");
  const int J = static_cast<int>(counts.size());
  if (J > K) throw DomainError("FSD urn: more blocks than atoms");
  const double n1 = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double a = alpha / K;
  UrnProbabilities p;
  for (int c : counts) p.existing.push_back((c + a) / (n1 + alpha));
  p.fresh = (K - J) * a / (n1 + alpha);
  return p;
}

namespace {

int draw_label(const UrnProbabilities& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t j = 0; j < p.existing.size(); ++j) {
    acc += p.existing[j];
    if (u < acc) return static_cast<int>(j);
  }
  if (p.fresh > 0.0) return kFresh;
  return static_cast<int>(p.existing.size()) - 1;
}

}  // namespace

int dp_urn_step(std::span<const int> labels, double alpha, Rng& rng) {
  return draw_label(dp_urn_probabilities(block_counts(labels), alpha), rng);
}

int fsd_urn_step(std::span<const int> labels, double alpha, int K, Rng& rng) {
  return draw_label(fsd_urn_probabilities(block_counts(labels), alpha, K), rng);
}

// ------------------------------------------------------------ Condition 1

ConditionPreset ConditionPreset::from_constants(const ConditionConstants& c) {
  ConditionPreset p;
  p.name = "constants";
  p.rhs_total = [c](int n) { return c.C1 / (n - 1 + c.C1); };
  p.rhs_approx_total = [c](int n, int K) { return c.C1 / K / (n - 1 + c.C1); };
  p.rhs_old = p.rhs_approx_total;
  p.rhs_new = [c](int n, int K) { return (c.C4 * std::log(n) + c.C5) / K / (n - 1 + c.C1); };
  p.new_applies = [c](int n, int K) { return K >= c.C2 * (std::log(n) + c.C3); };
  return p;
}

ConditionPreset ConditionPreset::for_model(const ExpFamilyModel& m) {
  ConditionPreset p;
  p.name = to_string(m.family());
  const double g = m.mass(), a = m.concentration(), r = m.r();
  switch (m.family()) {
    case LikelihoodFamily::BetaBernoulli:
      p.rhs_total = [g, a](int n) { return g * a / (n - 1 + a); };
      p.rhs_approx_total = [g, a](int n, int K) { return g * a / K / (n - 1 + a); };
      p.rhs_old = [g, a](int n, int K) { return 2 * g * a / K / (n - 1 + a); };
      p.rhs_new = [g, a](int n, int K) { return g * g * a / K / (n - 1 + a); };
      p.new_applies = [](int, int) { return true; };
      break;
    case LikelihoodFamily::GammaPoisson:
      p.rhs_total = [g, a](int n) { return g * a / (n - 1 + a); };
      p.rhs_approx_total = [g, a](int n, int K) { return g * a / K / (n - 1 + a); };
      p.rhs_old = [g, a](int n, int K) { return 2 * g * a / K / (n - 1 + a); };
      p.rhs_new = [g, a](int n, int K) { return (g * g * a + M_E * g * g * a * a) / K / (n - 1 + a); };
      p.new_applies = [g, a](int, int K) { return K >= g * a; };
      break;
    case LikelihoodFamily::BetaNegBinomial:
      p.rhs_total = [g, a, r](int n) { return g * a / (n - 1 + (a - 0.5) / r); };
      p.rhs_approx_total = [g, a, r](int n, int K) { return 4 * g * a / K / (n - 1 + (a - 0.5) / r); };
      p.rhs_old = [g, a, r](int n, int K) { return 2 * g * a / K / (n - 1 + a / r); };
      p.rhs_new = [g, a, r](int n, int K) {
        const double ga = g * a;
        return ga / K * ((4 * ga + 3) * std::log(r * n + a + 1) + (10 + 2 * r) * ga + 24) / (n - 1 + (a - 0.5) / r);
      };
      p.new_applies = [g, a, r](int n, int K) { return K >= g * a * (3 * std::log(r * (n - 1) + a) + 8); };
      break;
  }
  return p;
}

CertifiedSum condition_lhs_total(const ExpFamilyModel& m, int n, const ConditionOptions& opt) {
  const NewAtomRates rates{m, n};
  if (m.family() == LikelihoodFamily::BetaBernoulli) return {rates.first(), 0.0, 1};
  CompensatedSum s;
  double M = rates.first();
  long x = 1;
  double tail = kInf;
  for (; x <= opt.max_terms; ++x) {
    s += M;
    const double next = M * rates.ratio(x);
    if (m.family() == LikelihoodFamily::GammaPoisson) {
      const double rho = 1.0 / (m.concentration() + n);
      tail = next / (1.0 - rho);
    } else {
      tail = power_tail(M, x, 0.0, m.r() * n + m.concentration(), m.r());
    }
    if (tail < opt.tail_tol) break;
    M = next;
  }
  return {s.value() + tail, tail, x};
}

CertifiedSum condition_lhs_approx_total(const ExpFamilyModel& m, int K, int n) {
  const CountPmf q = approx_pmf(m, K, n, 0.0);
  if (m.family() == LikelihoodFamily::BetaBernoulli) return {q.p1(), 0.0, 1};
  return {-std::expm1(q.log_p0()), 0.0, 0};
}

CertifiedSum condition_lhs_old(const ExpFamilyModel& m, int K, int n, double A, const ConditionOptions& opt) {
  check_round(n);
  check_count(m, A, n);
  if (A == 0.0) throw DomainError("inequality 3 needs an instantiated atom (A >= 1)");
  const CountPmf q = approx_pmf(m, K, n, A);
  const CountPmf p = target_pmf(m, n, A);
  if (m.family() == LikelihoodFamily::BetaBernoulli) return {2.0 * std::abs(p.p1() - q.p1()), 0.0, 2};
  double px = std::exp(p.log_p0()), qx = std::exp(q.log_p0());
  CompensatedSum l1;
  long x = 0;
  double tail = kInf;
  for (; x <= opt.max_terms; ++x) {
    l1 += std::abs(px - qx);
    const double pn = px * p.ratio(static_cast<int>(x)), qn = qx * q.ratio(static_cast<int>(x));
    if (m.family() == LikelihoodFamily::GammaPoisson) {
      const double rp = p.ratio_sup(static_cast<int>(x) + 1), rq = q.ratio_sup(static_cast<int>(x) + 1);
      tail = (rp < 1 ? pn / (1 - rp) : kInf) + (rq < 1 ? qn / (1 - rq) : kInf);
    } else {
      const double b = m.r() * n + m.concentration();
      tail = power_tail(px, x, p.s, b, m.r()) + power_tail(qx, x, q.s, b, m.r());
    }
    if (tail < opt.tail_tol) break;
    px = pn;
    qx = qn;
  }
  return {l1.value() + tail, tail, x + 1};
}

CertifiedSum condition_lhs_new(const ExpFamilyModel& m, int K, int n, const ConditionOptions& opt) {
  const NewAtomRates rates{m, n};
  const CountPmf q = approx_pmf(m, K, n, 0.0);
  if (m.family() == LikelihoodFamily::BetaBernoulli) return {std::abs(rates.first() - K * q.p1()), 0.0, 1};
  double M = rates.first();
  double qx = std::exp(q.log_p0()) * q.ratio(0);
  CompensatedSum l1;
  long x = 1;
  double tail = kInf;
  for (; x <= opt.max_terms; ++x) {
    l1 += std::abs(M - K * qx);
    const double Mn = M * rates.ratio(static_cast<int>(x));
    const double qn = qx * q.ratio(static_cast<int>(x));
    if (m.family() == LikelihoodFamily::GammaPoisson) {
      const double rho = 1.0 / (m.concentration() + n);
      const double rq = q.ratio_sup(static_cast<int>(x) + 1);
      tail = Mn / (1 - rho) + K * qn / (1 - rq);
    } else {
      const double b = m.r() * n + m.concentration();
      tail = power_tail(M, x, 0.0, b, m.r()) + K * power_tail(qx, x, q.s, b, m.r());
    }
    if (tail < opt.tail_tol) break;
    M = Mn;
    qx = qn;
  }
  return {l1.value() + tail, tail, x};
}

std::vector<double> condition_history_grid(const ExpFamilyModel& m, int n) {
  if (n < 2) return {};
  std::vector<double> g{1, 2, 3, 5};
  for (double f : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) g.push_back(std::ceil(f * n));
  if (m.family() == LikelihoodFamily::BetaBernoulli) {
    g.push_back(n - 1);
    std::erase_if(g, [n](double A) { return A > n - 1; });
  }
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

bool ConditionReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const ConditionEntry& e) { return e.pass; });
}

nlohmann::json ConditionReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries)
    arr.push_back({{"inequality", e.inequality},
                   {"n_worst", e.n_worst},
                   {"K", e.K},
                   {"A_worst", e.A_worst},
                   {"lhs", e.lhs},
                   {"rhs", e.rhs},
                   {"slack", e.slack},
                   {"relative_slack", e.rel_slack},
                   {"checked", e.checked},
                   {"skipped", e.skipped},
                   {"failures", e.failures},
                   {"pass", e.pass}});
  return {{"preset", preset}, {"pass", pass()}, {"entries", arr}};
}

namespace {

struct Point {
  double lhs, rhs, A;
};

void merge(ConditionEntry& e, int n, int K, const Point& p) {
  ++e.checked;
  const double slack = p.rhs - p.lhs;
  const double rel = slack / p.rhs;
  if (slack < 0) {
    ++e.failures;
    e.pass = false;
  }
  if (e.checked == 1 || rel < e.rel_slack) {
    e.rel_slack = rel;
    e.slack = slack;
    e.n_worst = n;
    e.K = K;
    e.lhs = p.lhs;
    e.rhs = p.rhs;
    e.A_worst = p.A;
  }
}

}  // namespace

ConditionReport check_condition_1(const ExpFamilyModel& m, const ConditionPreset& preset, int n_max,
                                  std::span<const int> K_set, const ConditionOptions& opt) {
  if (n_max < 1) throw DomainError("n_max must be at least 1");
  ConditionReport rep;
  rep.preset = preset.name;
  ConditionEntry e1, e2, e3, e4;
  e1.inequality = 1;
  e2.inequality = 2;
  e3.inequality = 3;
  e4.inequality = 4;

  // Per-n worst points, computed in parallel and merged in n order.
  struct PerN {
    Point p1;
    std::vector<Point> p2, p4;
    std::vector<std::vector<Point>> p3;
    std::vector<char> applies4;
  };
  std::vector<PerN> res(n_max);
  parallel_for(
      static_cast<std::size_t>(n_max),
      [&](std::size_t i) {
        const int n = static_cast<int>(i) + 1;
        PerN& r = res[i];
        r.p1 = {condition_lhs_total(m, n, opt).value, preset.rhs_total(n), 0};
        const auto grid = condition_history_grid(m, n);
        for (int K : K_set) {
          r.p2.push_back({condition_lhs_approx_total(m, K, n).value, preset.rhs_approx_total(n, K), 0});
          std::vector<Point> p3;
          for (double A : grid) p3.push_back({condition_lhs_old(m, K, n, A, opt).value, preset.rhs_old(n, K), A});
          r.p3.push_back(std::move(p3));
          const bool ap = preset.new_applies(n, K);
          r.applies4.push_back(ap);
          r.p4.push_back(ap ? Point{condition_lhs_new(m, K, n, opt).value, preset.rhs_new(n, K), 0} : Point{0, 0, 0});
        }
      },
      opt.exec);

  for (int i = 0; i < n_max; ++i) {
    const int n = i + 1;
    merge(e1, n, 0, res[i].p1);
    for (std::size_t k = 0; k < K_set.size(); ++k) {
      const int K = K_set[k];
      merge(e2, n, K, res[i].p2[k]);
      for (const auto& p : res[i].p3[k]) merge(e3, n, K, p);
      if (res[i].applies4[k])
        merge(e4, n, K, res[i].p4[k]);
      else
        ++e4.skipped;
    }
  }
  rep.entries = {e1, e2, e3, e4};
  return rep;
}

ConditionReport check_condition_1(const ExpFamilyModel& m, const ConditionConstants& c, int n_max,
                                  std::span<const int> K_set, const ConditionOptions& opt) {
  return check_condition_1(m, ConditionPreset::from_constants(c), n_max, K_set, opt);
}

}  // namespace aifa
