#include "aifa/analysis.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <functional>
#include <numeric>
#include <sstream>

#include "aifa/marginals.hpp"
#include "aifa/numeric.hpp"

namespace aifa {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

// ------------------------------------------------------- distributions

CountDistribution truncated_poisson(double lambda, double tail_tol) {
  require(lambda > 0.0 && std::isfinite(lambda), "Poisson mean must be positive");
  require(tail_tol > 0.0 && tail_tol < 1.0, "tail tolerance must lie in (0, 1)");
  long X = static_cast<long>(std::ceil(lambda));
  while (poisson_tail_upper(lambda, X + 1 - lambda) >= tail_tol) ++X;
  const boost::math::poisson_distribution<double> pois(lambda);
  std::vector<long> s(X + 1);
  std::vector<double> m(X + 1);
  for (long x = 0; x <= X; ++x) {
    s[x] = x;
    m[x] = boost::math::pdf(pois, static_cast<double>(x));
  }
  const double deficit = boost::math::cdf(boost::math::complement(pois, static_cast<double>(X)));
  return {std::move(s), std::move(m), deficit};
}

CountDistribution binomial_distribution(long n, double p) {
  require(n >= 0, "binomial trials must be nonnegative");
  require(p >= 0.0 && p <= 1.0, "binomial probability must lie in [0, 1]");
  const boost::math::binomial_distribution<double> bin(static_cast<double>(n), p);
  std::vector<long> s(n + 1);
  std::vector<double> m(n + 1);
  for (long x = 0; x <= n; ++x) {
    s[x] = x;
    m[x] = boost::math::pdf(bin, static_cast<double>(x));
  }
  return {std::move(s), std::move(m), 0.0};
}

TvResult tv_binom_poisson(int K, double gamma) {
  require(K >= 1, "K must be at least 1");
  require(gamma > 0.0, "gamma must be positive");
  const double q = (gamma / K) / (1.0 + gamma / K);
  return tv_exact(truncated_poisson(gamma), binomial_distribution(K, q));
}

// ---------------------------------------------------------- evaluators

double growth_function(long N, double alpha) {
  require(N >= 1, "growth function needs N >= 1");
  require(alpha > 0.0, "growth function needs alpha > 0");
  CompensatedSum s;
  for (long n = 1; n <= N; ++n) s += alpha / (n - 1 + alpha);
  return s.value();
}

double growth_function_lower(long N, double alpha) {
  require(N >= 1 && alpha > 0.0, "growth function lower bound needs N >= 1, alpha > 0");
  return alpha * (std::log(static_cast<double>(N)) - boost::math::digamma(alpha) - 1.0);
}

double bondesson_tfa_bound(double N, int K, double gamma, double alpha) {
  require(N > 0 && K >= 1 && gamma > 0 && alpha > 0, "bondesson_tfa_bound: N, K, gamma, alpha must be positive");
  const double ga = gamma * alpha;
  return N * gamma * std::pow(ga / (1.0 + ga), K);
}

double tsb_dp_bound(double N, int K, double alpha) {
  require(N > 0 && K >= 1 && alpha > 0, "tsb_dp_bound: N, K, alpha must be positive");
  return 2.0 * N * std::exp(-(K - 1.0) / alpha);
}

double binom_poisson_lower_constant(double gamma) {
  require(gamma > 0, "binom_poisson_lower_constant: gamma must be positive");
  const double mx = std::max({12.0 * gamma * gamma, 48.0 * gamma, 28.0});
  return 0.125 / (gamma + std::exp(-1.0) * (gamma + 1.0) * mx);
}

double lecam_upper(double n, double p_sum) {
  require(n >= 0 && p_sum >= 0, "lecam_upper: arguments must be nonnegative");
  return n * p_sum * p_sum;
}

double poisson_tail_upper(double lambda, double x) {
  require(lambda > 0 && x >= 0, "poisson_tail_upper: lambda > 0, x >= 0");
  return std::exp(-x * x / (2.0 * (lambda + x)));
}

double poisson_tail_lower(double lambda, double x) {
  require(lambda > 0 && x >= 0, "poisson_tail_lower: lambda > 0, x >= 0");
  return std::exp(-x * x / (2.0 * lambda));
}

double chernoff_upper(double mu, double delta) {
  require(mu > 0 && delta > 0, "chernoff_upper: mu, delta must be positive");
  return std::exp(-delta * delta * mu / (2.0 + delta));
}

double chernoff_lower(double mu, double delta) {
  require(mu > 0 && delta > 0 && delta < 1, "chernoff_lower: mu > 0, delta in (0, 1)");
  return std::exp(-mu * delta * delta / 2.0);
}

double dp_fsd_two_sample_gap(double alpha, int K) {
  require(alpha > 0 && K >= 1, "dp_fsd_two_sample_gap: alpha > 0, K >= 1");
  return alpha / ((1.0 + alpha) * K);
}

namespace {

struct BoundEntry {
  const char* name;
  std::size_t arity;
  std::function<double(std::span<const double>)> fn;
};

int as_int(double v) {
  require(v == std::floor(v) && std::abs(v) < 2e9, "integer argument expected");
  return static_cast<int>(v);
}

const std::vector<BoundEntry>& bound_table() {
  static const std::vector<BoundEntry> t{
      {"bondesson_tfa_bound", 4, [](auto a) { return bondesson_tfa_bound(a[0], as_int(a[1]), a[2], a[3]); }},
      {"tsb_dp_bound", 3, [](auto a) { return tsb_dp_bound(a[0], as_int(a[1]), a[2]); }},
      {"binom_poisson_lower_constant", 1, [](auto a) { return binom_poisson_lower_constant(a[0]); }},
      {"lecam_upper", 2, [](auto a) { return lecam_upper(a[0], a[1]); }},
      {"poisson_tail_upper", 2, [](auto a) { return poisson_tail_upper(a[0], a[1]); }},
      {"poisson_tail_lower", 2, [](auto a) { return poisson_tail_lower(a[0], a[1]); }},
      {"chernoff_upper", 2, [](auto a) { return chernoff_upper(a[0], a[1]); }},
      {"chernoff_lower", 2, [](auto a) { return chernoff_lower(a[0], a[1]); }},
      {"dp_fsd_two_sample_gap", 2, [](auto a) { return dp_fsd_two_sample_gap(a[0], as_int(a[1])); }},
      {"growth_function", 2, [](auto a) { return growth_function(as_int(a[0]), a[1]); }},
      {"growth_function_lower", 2, [](auto a) { return growth_function_lower(as_int(a[0]), a[1]); }},
  };
  return t;
}

}  // namespace

double evaluate_bound(const std::string& name, std::span<const double> args) {
  for (const auto& e : bound_table()) {
    if (name != e.name) continue;
    if (args.size() != e.arity)
      throw DomainError(name + ": expected " + std::to_string(e.arity) + " arguments");
    return e.fn(args);
  }
  throw DomainError("unknown bound '" + name + "'");
}

std::vector<std::string> bound_names() {
  std::vector<std::string> out;
  for (const auto& e : bound_table()) out.emplace_back(e.name);
  return out;
}

// -------------------------------------------------------------- EPPFs

PartitionComposition::PartitionComposition(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  require(!sizes_.empty(), "composition needs at least one block");
  for (int s : sizes_) require(s >= 1, "block sizes must be positive");
  std::sort(sizes_.begin(), sizes_.end(), std::greater<int>());
  N_ = std::accumulate(sizes_.begin(), sizes_.end(), 0);
}

double PartitionComposition::set_partition_count() const {
  double lc = std::lgamma(N_ + 1.0);
  for (int s : sizes_) lc -= std::lgamma(s + 1.0);
  for (std::size_t i = 0; i < sizes_.size();) {
    std::size_t j = i;
    while (j < sizes_.size() && sizes_[j] == sizes_[i]) ++j;
    lc -= std::lgamma(static_cast<double>(j - i) + 1.0);
    i = j;
  }
  return std::round(std::exp(lc));
}

std::vector<int> PartitionComposition::canonical_sequence() const {
  std::vector<int> seq;
  for (int i = 0; i < blocks(); ++i) seq.push_back(i);
  for (int i = 0; i < blocks(); ++i)
    for (int k = 1; k < sizes_[i]; ++k) seq.push_back(i);
  return seq;
}

std::string PartitionComposition::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < sizes_.size(); ++i) os << (i ? "+" : "") << sizes_[i];
  return os.str();
}

std::vector<PartitionComposition> compositions(int N) {
  require(N >= 1, "compositions need N >= 1");
  std::vector<PartitionComposition> out;
  std::vector<int> cur;
  std::function<void(int, int)> rec = [&](int rest, int cap) {
    if (rest == 0) {
      out.emplace_back(cur);
      return;
    }
    for (int s = std::min(rest, cap); s >= 1; --s) {
      cur.push_back(s);
      rec(rest - s, s);
      cur.pop_back();
    }
  };
  rec(N, N);
  return out;
}

std::vector<std::vector<int>> enumerate_set_partitions(int N) {
  require(N >= 1 && N <= 14, "set partitions enumerated for 1 <= N <= 14");
  std::vector<std::vector<int>> out;
  std::vector<int> cur{0};
  std::function<void(int)> rec = [&](int used) {
    if (static_cast<int>(cur.size()) == N) {
      out.push_back(cur);
      return;
    }
    for (int l = 0; l <= used; ++l) {
      cur.push_back(l);
      rec(std::max(used, l + 1));
      cur.pop_back();
    }
  };
  rec(1);
  return out;
}

std::vector<int> canonical_labels(std::span<const int> labels) {
  std::map<int, int> relabel;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto [it, fresh] = relabel.emplace(l, static_cast<int>(relabel.size()));
    out.push_back(it->second);
  }
  return out;
}

PartitionComposition composition_of(std::span<const int> labels) {
  return PartitionComposition(block_counts(canonical_labels(labels)));
}

EppfSource EppfSource::dp(double alpha) {
  require(alpha > 0, "DP concentration must be positive");
  EppfSource s;
  s.kind = Kind::DP;
  s.alpha = alpha;
  return s;
}

EppfSource EppfSource::fsd(double gamma, int K) {
  require(gamma > 0 && K >= 1, "FSD needs gamma > 0 and K >= 1");
  EppfSource s;
  s.kind = Kind::FSD;
  s.alpha = gamma;
  s.K = K;
  return s;
}

EppfSource EppfSource::normalized(WeightDistribution w) {
  EppfSource s;
  s.kind = Kind::NormalizedAifa;
  s.K = w.K();
  s.weights.push_back(std::move(w));
  return s;
}

std::string EppfSource::name() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::DP: os << "DP(" << alpha << ")"; break;
    case Kind::FSD: os << "FSD(" << alpha << "," << K << ")"; break;
    case Kind::NormalizedAifa: os << "normalized " << to_string(weights.at(0).kind()) << "(K=" << K << ")"; break;
  }
  return os.str();
}

double sequence_probability(const EppfSource& src, std::span<const int> labels) {
  if (src.kind == EppfSource::Kind::NormalizedAifa)
    throw UnsupportedError("sequential probabilities need a DP or FSD urn");
  const std::vector<int> seq = canonical_labels(labels);
  std::vector<int> counts;
  double logp = 0.0;
  for (int l : seq) {
    const UrnProbabilities u = src.kind == EppfSource::Kind::DP ? dp_urn_probabilities(counts, src.alpha)
                                                                : fsd_urn_probabilities(counts, src.alpha, src.K);
    const double p = l == static_cast<int>(counts.size()) ? u.fresh : u.existing[l];
    if (p == 0.0) return 0.0;
    logp += std::log(p);
    if (l == static_cast<int>(counts.size())) counts.push_back(0);
    counts[l] += 1;
  }
  return std::exp(logp);
}

namespace {

// Labels of N observations from one draw of the source.
void draw_labels(const EppfSource& src, int N, Rng& rng, std::vector<int>& labels, std::vector<double>& cdf) {
  labels.clear();
  if (src.kind == EppfSource::Kind::DP) {
    for (int n = 0; n < N; ++n) {
      const int l = dp_urn_step(labels, src.alpha, rng);
      labels.push_back(l == kFresh ? (labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1) : l);
    }
    return;
  }
  const std::vector<double> lw = sample_log_weights(src.weights.at(0), rng);
  const double lse = log_sum_exp(lw);
  cdf.resize(lw.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < lw.size(); ++k) cdf[k] = (acc += std::exp(lw[k] - lse));
  for (int n = 0; n < N; ++n) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    labels.push_back(static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), cdf.size() - 1)));
  }
}

}  // namespace

EppfResult eppf(const EppfSource& src, const PartitionComposition& comp, const EppfMethod& method) {
  EppfResult r;
  if (method.kind == EppfMethod::Kind::ExactSequential) {
    r.value = sequence_probability(src, comp.canonical_sequence());
    return r;
  }
  require(method.replicates >= 1, "Monte Carlo EPPF needs replicates >= 1");
  EppfSource s = src;
  if (s.kind == EppfSource::Kind::FSD) s.weights = {WeightDistribution::fsd(s.alpha, s.K)};
  constexpr long kChunk = 4096;
  const long chunks = (method.replicates + kChunk - 1) / kChunk;
  const auto hits = run_replicates(
      static_cast<std::size_t>(chunks), method.seed,
      [&](std::size_t c, Rng& rng) {
        const long lo = static_cast<long>(c) * kChunk;
        const long hi = std::min(method.replicates, lo + kChunk);
        std::vector<int> labels;
        std::vector<double> cdf;
        long h = 0;
        for (long i = lo; i < hi; ++i) {
          draw_labels(s, comp.N(), rng, labels, cdf);
          if (composition_of(labels) == comp) ++h;
        }
        return h;
      },
      method.exec);
  r.hits = std::accumulate(hits.begin(), hits.end(), 0L);
  const double R = static_cast<double>(method.replicates);
  const double phat = r.hits / R;
  const double count = comp.set_partition_count();
  r.value = phat / count;
  r.std_error = std::sqrt(phat * (1.0 - phat) / R) / count;
  if (r.hits < 10) {
    r.wide_interval = true;
    r.warning = "fewer than 10 samples hit the composition; the estimate is unreliable";
  }
  return r;
}

std::vector<EppfConvergenceRow> eppf_convergence(double alpha, int N, std::span<const int> Ks) {
  std::vector<EppfConvergenceRow> rows;
  const EppfSource dp = EppfSource::dp(alpha);
  for (const auto& comp : compositions(N)) {
    const double target = eppf(dp, comp).value;
    for (int K : Ks) {
      const double pk = eppf(EppfSource::fsd(alpha, K), comp).value;
      rows.push_back({K, comp.to_string(), pk, target, std::abs(pk - target)});
    }
  }
  return rows;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "slope needs two or more points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, "log-log slope needs positive values");
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace aifa
