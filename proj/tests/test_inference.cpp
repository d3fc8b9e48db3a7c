#include <doctest.h>

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "aifa/errors.hpp"
#include "aifa/inference.hpp"

using namespace aifa;

namespace {

LinearGaussianModel model(int D, int K, PriorKind prior, double gamma = 1.0) {
  LinearGaussianModel m;
  m.D = D;
  m.K = K;
  m.gamma = gamma;
  m.alpha = 1.0;
  m.prior = prior;
  m.a_w = m.b_w = m.a_e = m.b_e = 2.0;
  return m;
}

bool non_increasing(const Eigen::VectorXd& t) {
  for (Eigen::Index k = 1; k < t.size(); ++k)
    if (t(k) > t(k - 1)) return false;
  return true;
}

}  // namespace

TEST_CASE("aifa tau conditional parameters") {
  LinearGaussianModel m = model(1, 10, PriorKind::Aifa);
  CHECK(aifa_tau_conditional(0, 2, 3, m) == BetaParams{1.0 / 10 + 2, 2.0});
  CHECK(aifa_tau_conditional(3, 0, 0, m) == BetaParams{0.1, 1.0});
  m.gamma = 3.0;
  m.alpha = 2.0;
  m.K = 4;
  // exponent of tau is gamma alpha / K + sum x - 1, of 1 - tau is alpha + N - sum x - 1
  for (long N = 0; N <= 10; ++N)
    for (long s = 0; s <= N; ++s) {
      const BetaParams p = aifa_tau_conditional(1, s, N, m);
      CHECK(p.a - 1 == (1.5 - 1) + s);
      CHECK(p.b - 1 == (2.0 - 1) + (N - s));
    }
  const BetaParams full = aifa_tau_conditional(0, 1000, 1000, m);
  CHECK(full.a / (full.a + full.b) > 0.99);
  CHECK_THROWS_AS(aifa_tau_conditional(0, 4, 3, m), DomainError);
  CHECK_THROWS_AS(aifa_tau_conditional(4, 0, 3, m), DomainError);
}

TEST_CASE("tfa conditional with one atom and no data is the prior") {
  const LinearGaussianModel m = model(2, 1, PriorKind::BondessonTfa, 2.5);
  GibbsState s;
  s.tau = Eigen::VectorXd::Constant(1, 0.5);
  s.psi = Eigen::MatrixXd::Zero(2, 1);
  s.x.resize(0, 1);
  s.w.resize(0, 1);
  Rng rng(11);
  const int n = 100000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = tfa_tau_conditional_sample(s, m, 0, rng).value;
    sum += v;
    sum2 += v * v;
  }
  // Beta(2.5, 1): mean 2.5/3.5, second moment 2.5/4.5
  const double mean = sum / n, m2 = sum2 / n;
  const double var = 2.5 / 4.5 - std::pow(2.5 / 3.5, 2);
  CHECK(std::abs(mean - 2.5 / 3.5) < 3 * std::sqrt(var / n));
  CHECK(std::abs(m2 - 2.5 / 4.5) < 0.01);
}

TEST_CASE("truncated beta matches quadrature and respects bounds") {
  struct Case {
    double a, b, lo, hi;
  };
  const Case cases[] = {{3.0, 5.0, 0.2, 0.4},     {0.0, 7.0, 0.3, 0.9},    {12.0, 1.0, 0.05, 0.1},
                        {2.0, 400.0, 0.5, 0.8},   {0.5, 1.0, 0.0, 0.01},   {1.0, 30.0, 1e-6, 1e-3}};
  std::uint64_t stream = 0;
  for (const auto& c : cases) {
    using boost::math::quadrature::gauss_kronrod;
    // normalize in log space to avoid underflow in far tails
    const double mid = 0.5 * (c.lo + c.hi);
    auto logf = [&](double t) { return (c.a - 1) * std::log(t) + (c.b - 1) * std::log1p(-t); };
    const double ref = logf(std::clamp(c.a > 1 ? (c.a - 1) / (c.a + c.b - 2) : c.lo + 1e-12, c.lo + 1e-12, c.hi));
    auto f = [&](double t) { return t <= 0 ? 0.0 : std::exp(logf(t) - ref); };
    const double z = gauss_kronrod<double, 61>::integrate(f, c.lo, c.hi, 15, 1e-13);
    const double m1 = gauss_kronrod<double, 61>::integrate([&](double t) { return t * f(t); }, c.lo, c.hi, 15, 1e-13) / z;
    const double m2 =
        gauss_kronrod<double, 61>::integrate([&](double t) { return t * t * f(t); }, c.lo, c.hi, 15, 1e-13) / z;
    Rng rng(derive_seed(21, stream++));
    const int n = 100000;
    double sum = 0;
    bool inside = true;
    for (int i = 0; i < n; ++i) {
      const TruncatedDraw d = sample_truncated_beta(c.a, c.b, c.lo, c.hi, rng);
      inside = inside && d.value >= c.lo && d.value <= c.hi && !d.degenerate;
      sum += d.value;
    }
    INFO("a=" << c.a << " b=" << c.b << " [" << c.lo << "," << c.hi << "] mid " << mid);
    CHECK(inside);
    CHECK(std::abs(sum / n - m1) < 3 * std::sqrt((m2 - m1 * m1) / n));
  }
  Rng rng(1);
  const TruncatedDraw d = sample_truncated_beta(2.0, 3.0, 0.4, 0.4 + 1e-15, rng);
  CHECK(d.degenerate);
  CHECK(d.value == doctest::Approx(0.4));
}

TEST_CASE("tfa ordering holds after every sweep") {
  const LinearGaussianModel m = model(3, 8, PriorKind::BondessonTfa, 2.0);
  Rng rng(5);
  const SyntheticData data = generate_synthetic(40, 3, 2, 0.4, 0.3, rng);
  GibbsState s = initial_state(m, 40, rng);
  std::sort(s.tau.data(), s.tau.data() + s.tau.size(), std::greater<>());
  for (int i = 0; i < 300; ++i) {
    gibbs_sweep(m, s, data.Y, rng);
    REQUIRE(non_increasing(s.tau));
    REQUIRE(s.tau(0) < 1.0);
    REQUIRE(s.tau(m.K - 1) > 0.0);
    // each tau draw respects its neighbours
    for (int k = 0; k < m.K; ++k) {
      const double before = s.tau(k);
      const double v = tfa_tau_conditional_sample(s, m, k, rng).value;
      REQUIRE(v <= (k == 0 ? 1.0 : s.tau(k - 1)));
      REQUIRE(v >= (k == m.K - 1 ? 0.0 : s.tau(k + 1)));
      s.tau(k) = before;
    }
  }
}

TEST_CASE("joint density is invariant to atom relabelling") {
  const LinearGaussianModel m = model(4, 6, PriorKind::Aifa, 3.0);
  Rng rng(9);
  const GibbsState s = sample_prior_state(m, 15, rng);
  const Eigen::MatrixXd Y = sample_observations(m, s, rng);
  const double base = log_joint_terms(m, s, Y).total();
  std::vector<int> perm(m.K);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    GibbsState p = s;
    for (int k = 0; k < m.K; ++k) {
      p.tau(k) = s.tau(perm[k]);
      p.psi.col(k) = s.psi.col(perm[k]);
      p.x.col(k) = s.x.col(perm[k]);
      p.w.col(k) = s.w.col(perm[k]);
    }
    CHECK(std::abs(log_joint_terms(m, p, Y).total() - base) < 1e-10);
  }
}

TEST_CASE("updates only touch their markov blanket") {
  for (PriorKind prior : {PriorKind::Aifa, PriorKind::BondessonTfa}) {
    const LinearGaussianModel m = model(3, 5, prior, 2.0);
    Rng rng(13);
    GibbsState s = sample_prior_state(m, 12, rng);
    const Eigen::MatrixXd Y = sample_observations(m, s, rng);
    for (int i = 0; i < 50; ++i) CHECK_NOTHROW(gibbs_sweep(m, s, Y, rng, {.audit = true}));
  }
}

TEST_CASE("zero-feature state draws w and psi from their priors") {
  LinearGaussianModel m = model(2, 1, PriorKind::Aifa);
  m.psi_var = 4.0;
  GibbsState s;
  s.tau = Eigen::VectorXd::Constant(1, 0.3);
  s.psi = Eigen::MatrixXd::Zero(2, 1);
  s.x = Eigen::MatrixXi::Zero(1, 1);
  s.w = Eigen::MatrixXd::Zero(1, 1);
  s.gamma_w = 0.25;
  s.gamma_e = 1.0;
  const Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(1, 2, 5.0);
  Rng rng(17);
  const int n = 100000;
  double w2 = 0, p2 = 0, pm = 0;
  for (int i = 0; i < n; ++i) {
    update_w(m, s, Y, rng);
    update_psi(m, s, Y, rng);
    w2 += s.w(0, 0) * s.w(0, 0);
    p2 += s.psi(0, 0) * s.psi(0, 0);
    pm += s.psi(1, 0);
  }
  // second moments 1/gamma_w = 4 and psi_var = 4; relative sd of the mean is sqrt(2/n)
  CHECK(std::abs(w2 / n - 4.0) < 3 * 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(p2 / n - 4.0) < 3 * 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(pm / n) < 3 * 2.0 / std::sqrt(n));
}

TEST_CASE("non-finite state is reported by name") {
  const LinearGaussianModel m = model(2, 3, PriorKind::Aifa);
  Rng rng(3);
  GibbsState s = sample_prior_state(m, 4, rng);
  Eigen::MatrixXd Y = sample_observations(m, s, rng);
  Y(0, 0) = std::nan("");
  try {
    gibbs_sweep(m, s, Y, rng);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("observations") != std::string::npos);
  }
  Y(0, 0) = 0.0;
  s.w(1, 1) = std::numeric_limits<double>::infinity();
  s.x(1, 1) = 0;
  CHECK_THROWS_AS(update_precisions(m, s, Y, rng), NumericalError);
  CHECK_THROWS_AS(gibbs_sweep(m, s, Eigen::MatrixXd::Zero(4, 3), rng), DomainError);
}

TEST_CASE("synthetic recovery of active features per row") {
  Rng rng(2024);
  const SyntheticData data = generate_synthetic(200, 5, 3, 0.5, 0.1, rng);
  const double truth = data.truth.x.cast<double>().sum() / 200.0;
  LinearGaussianModel m = model(5, 10, PriorKind::Aifa, 2.0);
  m.a_w = m.b_w = m.a_e = m.b_e = 1e-6;
  const ChainResult r = run_chain(m, data.Y, {.sweeps = 2000, .burnin = 1000, .thin = 10}, rng);
  double mean = 0;
  for (const auto& t : r.trace)
    if (t.sweep > 1000) mean += t.active_per_row;
  mean /= 1000;
  INFO("truth " << truth << " posterior " << mean);
  CHECK(std::abs(mean - truth) <= 0.25 * truth);
  CHECK(r.samples.size() == 100);
}

TEST_CASE("predictive log-likelihood") {
  GibbsState s;
  s.tau = Eigen::VectorXd::Zero(2);
  s.psi = Eigen::MatrixXd::Ones(3, 2);
  s.x = Eigen::MatrixXi::Zero(1, 2);
  s.w = Eigen::MatrixXd::Zero(1, 2);
  s.gamma_w = 1.0;
  s.gamma_e = 4.0;
  Rng rng(1);
  // no active features: the reconstruction is 0 and the density is the Gaussian normalizer
  const double expect = -1.5 * std::log(2 * M_PI / 4.0);
  CHECK(predictive_log_likelihood({s}, Eigen::MatrixXd::Zero(1, 3), rng) == doctest::Approx(expect).epsilon(1e-14));

  const LinearGaussianModel m = model(3, 4, PriorKind::Aifa, 2.0);
  std::vector<GibbsState> samples;
  for (int i = 0; i < 5; ++i) samples.push_back(sample_prior_state(m, 2, rng));
  const Eigen::MatrixXd held = sample_observations(m, samples[0], rng);
  const double a = predictive_log_likelihood(samples, held, rng);
  std::reverse(samples.begin(), samples.end());
  const double b = predictive_log_likelihood(samples, held, rng);
  CHECK(std::abs(a - b) < 1e-12);

  // Monte Carlo over x agrees with exact enumeration
  const double mc = predictive_log_likelihood(samples, held, rng, {.exact_max_K = 0, .mc_draws = 20000});
  CHECK(std::abs(mc - a) < 0.05);
  CHECK_THROWS_AS(predictive_log_likelihood({}, held, rng), DomainError);
}

TEST_CASE("geweke joint distribution test") {
  const LinearGaussianModel m = model(3, 5, PriorKind::Aifa, 2.0);
  const GewekeResult g = geweke_test(m, 20, 10000, 77);
  for (const auto& mo : g.moments) {
    INFO(mo.name << " mc " << mo.mc_mean << " sc " << mo.sc_mean << " z " << mo.z);
    CHECK(std::abs(mo.z) <= 3.0);
  }
  CHECK(g.moments.size() == 6);
}

TEST_CASE("chains are reproducible and independent of thread mode") {
  const LinearGaussianModel m = model(2, 4, PriorKind::BondessonTfa, 1.5);
  Rng rng(4);
  const SyntheticData data = generate_synthetic(20, 2, 2, 0.5, 0.3, rng);
  const ChainOptions opt{.sweeps = 30, .burnin = 10, .thin = 5};
  const auto a = run_chains(m, data.Y, opt, 3, 99, Execution::Serial);
  const auto b = run_chains(m, data.Y, opt, 3, 99, Execution::Parallel);
  REQUIRE(a.size() == 3);
  for (int c = 0; c < 3; ++c) CHECK(a[c].trace_csv() == b[c].trace_csv());
  CHECK(a[0].trace_csv() != a[1].trace_csv());
  CHECK(a[0].trace_csv().rfind("sweep,stat_name,value\n", 0) == 0);
}

TEST_CASE("json round trips") {
  const LinearGaussianModel m = model(3, 4, PriorKind::BondessonTfa, 2.0);
  const LinearGaussianModel m2 = LinearGaussianModel::from_json(m.to_json());
  CHECK(m2.to_json() == m.to_json());
  nlohmann::json bad = m.to_json();
  bad["extra"] = 1;
  CHECK_THROWS_AS(LinearGaussianModel::from_json(bad), DomainError);
  nlohmann::json tfa = m.to_json();
  tfa["alpha"] = 2.0;
  CHECK_THROWS_AS(LinearGaussianModel::from_json(tfa), UnsupportedError);

  Rng rng(8);
  const GibbsState s = sample_prior_state(m, 5, rng);
  const GibbsState t = GibbsState::from_json(s.to_json());
  CHECK(t.tau == s.tau);
  CHECK(t.psi == s.psi);
  CHECK(t.x == s.x);
  CHECK(t.w == s.w);
  CHECK(t.gamma_w == s.gamma_w);
  CHECK(t.gamma_e == s.gamma_e);
  CHECK(observations_csv(Eigen::MatrixXd::Constant(1, 1, 0.1)) == "row,dim,value\n0,0,0.1\n");
}
