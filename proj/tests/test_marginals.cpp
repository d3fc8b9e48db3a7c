#include <doctest.h>

#include <algorithm>
#include <array>
#include <boost/math/distributions/negative_binomial.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <chrono>
#include <cmath>
#include <numeric>

#include "aifa/errors.hpp"
#include "aifa/marginals.hpp"

using namespace aifa;

namespace {

// NB(x | s, p) with failure probability p, via Boost.
double nb_pmf(int x, double s, double p) {
  return boost::math::pdf(boost::math::negative_binomial_distribution<double>(s, 1.0 - p), x);
}

// Beta-negative-binomial predictive by integrating NB(x | r, theta) against
// the Beta(a, b) posterior.
double bnb_pmf_quad(int x, double r, double a, double b) {
  boost::math::quadrature::tanh_sinh<double> ts;
  auto f = [&](double t) {
    const double th = 1.0 / (1.0 + std::exp(-t));
    if (!(th > 0.0) || th >= 1.0) return 0.0;
    const double l = std::lgamma(x + r) - std::lgamma(x + 1.0) - std::lgamma(r) + x * std::log(th) +
                     r * std::log1p(-th) + (a - 1) * std::log(th) + (b - 1) * std::log1p(-th) -
                     (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b)) + std::log(th) + std::log1p(-th);
    return std::exp(l);
  };
  return ts.integrate(f, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
}

double pmf_sum(const std::function<double(int)>& p, int upto) {
  double s = 0;
  for (int x = 0; x <= upto; ++x) s += p(x);
  return s;
}

const std::array<int, 3> kKs{10, 100, 1000};

}  // namespace

TEST_CASE("predictive pmf examples") {
  const auto bb = ExpFamilyModel::beta_bernoulli(1, 1);
  const std::vector<int> h{1, 0};
  CHECK(target_predictive_pmf(bb, h, 1) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(target_predictive_pmf(bb, h, 0) + target_predictive_pmf(bb, h, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(approx_predictive_pmf(bb, 10, h, 1) == doctest::Approx(1.1 / 3.1).epsilon(1e-14));
  CHECK(approx_predictive_pmf(bb, 10, std::vector<int>{}, 1) == doctest::Approx(0.1 / 1.1).epsilon(1e-14));
  CHECK(approx_predictive_pmf(bb, 10, 1, 0.0, 0) + approx_predictive_pmf(bb, 10, 1, 0.0, 1) ==
        doctest::Approx(1.0).epsilon(1e-15));

  const auto gp = ExpFamilyModel::gamma_poisson(1, 1);
  for (int x = 0; x < 30; ++x)
    CHECK(target_predictive_pmf(gp, std::vector<int>{2}, x) == doctest::Approx(nb_pmf(x, 2, 1.0 / 3)).epsilon(1e-12));

  CHECK_THROWS_AS(target_predictive_pmf(bb, std::vector<int>{0, 0}, 1), DomainError);
  CHECK_THROWS_AS(target_predictive_pmf(gp, std::vector<int>{}, 1), DomainError);
  CHECK_THROWS_AS(target_predictive_pmf(bb, std::vector<int>{2}, 1), DomainError);
  CHECK(target_predictive_pmf(bb, std::vector<int>{1}, 2) == 0.0);
}

TEST_CASE("predictive pmfs against independent oracles") {
  SUBCASE("gamma-Poisson approximation is NB(A + c/K, 1/(lambda + n))") {
    const auto gp = ExpFamilyModel::gamma_poisson(2, 3);
    for (int K : {1, 10, 1000})
      for (int n : {1, 4, 30})
        for (double A : {0.0, 1.0, 7.0})
          for (int x = 0; x < 20; ++x)
            CHECK(approx_predictive_pmf(gp, K, n, A, x) ==
                  doctest::Approx(nb_pmf(x, A + 6.0 / K, 1.0 / (3 + n))).epsilon(1e-11));
  }
  SUBCASE("beta-negative binomial target and approximation") {
    const double g = 1.5, a = 2.5, r = 2;
    const auto m = ExpFamilyModel::beta_negative_binomial(g, a, r);
    for (int n : {2, 5})
      for (double A : {1.0, 4.0})
        for (int x = 0; x < 8; ++x) {
          CHECK(target_predictive_pmf(m, n, A, x) ==
                doctest::Approx(bnb_pmf_quad(x, r, A, r * (n - 1) + a)).epsilon(1e-9));
          CHECK(approx_predictive_pmf(m, 10, n, A, x) ==
                doctest::Approx(bnb_pmf_quad(x, r, A + g * a / 10, r * (n - 1) + a)).epsilon(1e-9));
        }
  }
  SUBCASE("pmfs are proper") {
    const auto gp = ExpFamilyModel::gamma_poisson(1, 0.5);
    CHECK(pmf_sum([&](int x) { return target_predictive_pmf(gp, 3, 2.0, x); }, 400) ==
          doctest::Approx(1.0).epsilon(1e-12));
    const auto bnb = ExpFamilyModel::beta_negative_binomial(1, 3, 1);
    CHECK(pmf_sum([&](int x) { return approx_predictive_pmf(bnb, 5, 10, 3.0, x); }, 200000) ==
          doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("K to infinity recovers the target predictive") {
  const auto models = {ExpFamilyModel::beta_bernoulli(2, 1.5), ExpFamilyModel::gamma_poisson(1, 2),
                       ExpFamilyModel::beta_negative_binomial(1, 2, 1)};
  for (const auto& m : models)
    for (int x = 0; x <= 1; ++x)
      CHECK(std::abs(approx_predictive_pmf(m, 10000000, 4, 2.0, x) - target_predictive_pmf(m, 4, 2.0, x)) < 1e-6);
}

TEST_CASE("new-atom rates") {
  const auto bb = ExpFamilyModel::beta_bernoulli(2, 1);
  CHECK(target_new_atom_rate(bb, 1, 1) == doctest::Approx(2.0));
  CHECK(target_new_atom_rate(bb, 1, 2) == 0.0);
  CHECK(target_new_atom_rate(bb, 1, 5) == 0.0);
  const auto gp = ExpFamilyModel::gamma_poisson(1, 1);
  CHECK(target_new_atom_rate(gp, 1, 2) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK_THROWS_AS(target_new_atom_rate(gp, 1, 0), DomainError);

  // sum over rounds is gamma * sum_n alpha/(alpha - 1 + n)
  const auto bb2 = ExpFamilyModel::beta_bernoulli(1.5, 2);
  double s = 0, harmonic = 0;
  for (int n = 1; n <= 50; ++n) {
    s += target_new_atom_rate(bb2, n, 1);
    harmonic += 2.0 / (1.0 + n);
  }
  CHECK(s == doctest::Approx(1.5 * harmonic).epsilon(1e-13));

  // closed-form totals against direct summation
  for (int n : {1, 3, 40}) {
    double t = 0;
    for (int x = 1; x < 200; ++x) t += target_new_atom_rate(gp, n, x);
    CHECK(target_new_atom_total(gp, n) == doctest::Approx(t).epsilon(1e-13));
  }
  const auto bnb = ExpFamilyModel::beta_negative_binomial(1, 2, 1.5);
  for (int n : {1, 3}) {
    const CertifiedSum c = condition_lhs_total(bnb, n);
    CHECK(c.value == doctest::Approx(target_new_atom_total(bnb, n)).epsilon(1e-10));
    double t = 0;
    for (int x = 1; x < 20000; ++x) t += target_new_atom_rate(bnb, n, x);
    CHECK(t <= target_new_atom_total(bnb, n));
    CHECK(t == doctest::Approx(target_new_atom_total(bnb, n)).epsilon(1e-3));
  }
}

TEST_CASE("Monte Carlo draws match the predictive pmfs") {
  const auto models = {ExpFamilyModel::beta_bernoulli(1, 2), ExpFamilyModel::gamma_poisson(2, 1),
                       ExpFamilyModel::beta_negative_binomial(1, 3, 2)};
  const int R = 100000;
  std::uint64_t stream = 0;
  for (const auto& m : models)
    for (int n : {2, 5, 20}) {
      const double A = std::min<double>(n - 1, 3);
      for (int kind = 0; kind < 2; ++kind) {
        Rng rng(derive_seed(8, ++stream));
        std::vector<int> hist(64, 0);
        for (int i = 0; i < R; ++i) {
          const int x = kind == 0 ? sample_target_predictive(m, n, A, rng) : sample_approx_predictive(m, 10, n, A, rng);
          if (x < 64) ++hist[x];
        }
        for (int x = 0; x < 6; ++x) {
          const double p = kind == 0 ? target_predictive_pmf(m, n, A, x) : approx_predictive_pmf(m, 10, n, A, x);
          const double se = std::sqrt(p * (1 - p) / R);
          INFO(to_string(m.family()), " n=", n, " kind=", kind, " x=", x);
          CHECK(std::abs(hist[x] / double(R) - p) <= 3 * se + 1e-12);
        }
      }
    }
}

TEST_CASE("exchangeability of the target allocation probability") {
  const auto bb = ExpFamilyModel::beta_bernoulli(1.3, 0.7);
  const std::vector<std::vector<std::vector<int>>> allocations{
      {{1, 0, 1}, {1, 1, 0}, {0, 1, 1}},
      {{1, 0, 0}, {1, 0, 0}, {0, 0, 1}, {1, 1, 1}},
      {{0, 1, 0}},
  };
  const std::vector<std::array<int, 3>> perms{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& cols : allocations) {
    FeatureAllocation f(3);
    for (auto c : cols) f.add_column(c);
    const double base = log_target_allocation_probability(bb, f);
    for (const auto& p : perms) {
      const auto g = f.permute_rows(p);
      CHECK(std::abs(std::exp(log_target_allocation_probability(bb, g)) - std::exp(base)) < 1e-10);
    }
  }
  // N = 1: column count is Poisson(gamma)
  for (int k = 0; k < 5; ++k) {
    FeatureAllocation f(1);
    for (int j = 0; j < k; ++j) f.add_column({1});
    CHECK(log_target_allocation_probability(bb, f) ==
          doctest::Approx(-1.3 + k * std::log(1.3) - std::lgamma(k + 1.0)).epsilon(1e-13));
  }
  // gamma-Poisson is exchangeable too
  const auto gp = ExpFamilyModel::gamma_poisson(0.8, 1.5);
  FeatureAllocation f(3);
  f.add_column({2, 0, 1});
  f.add_column({1, 3, 0});
  f.add_column({0, 1, 1});
  const double base = log_target_allocation_probability(gp, f);
  for (const auto& p : perms)
    CHECK(log_target_allocation_probability(gp, f.permute_rows(p)) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("simulated allocations") {
  SUBCASE("target beta-Bernoulli column count has mean H_50") {
    const auto bb = ExpFamilyModel::beta_bernoulli(1, 1);
    const int R = 10000;
    double sum = 0;
    for (int i = 0; i < R; ++i) {
      Rng rng(derive_seed(21, i));
      sum += simulate_allocation(bb, 50, AllocationSource::target(), rng).cols();
    }
    const double mean = 4.499205338329425;  // sum_{n <= 50} 1/n
    CHECK(std::abs(sum / R - mean) <= 3 * std::sqrt(mean / R));
  }
  SUBCASE("AIFA K = 10, N = 1 has mean 10/11 active columns") {
    const auto bb = ExpFamilyModel::beta_bernoulli(1, 1);
    const int R = 10000;
    double sum = 0;
    for (int i = 0; i < R; ++i) {
      Rng rng(derive_seed(22, i));
      sum += simulate_allocation(bb, 1, AllocationSource::aifa(10), rng).cols();
    }
    const double q = 0.1 / 1.1;
    CHECK(std::abs(sum / R - 10 * q) <= 3 * std::sqrt(10 * q * (1 - q) / R));
  }
  SUBCASE("AIFA never exceeds K columns and columns are well formed") {
    const auto gp = ExpFamilyModel::gamma_poisson(5, 1);
    for (int i = 0; i < 200; ++i) {
      Rng rng(derive_seed(23, i));
      const auto f = simulate_allocation(gp, 30, AllocationSource::aifa(4), rng);
      CHECK(f.cols() <= 4);
      for (int j = 1; j < f.cols(); ++j) {
        const int b0 = f.birth_row(j - 1), b1 = f.birth_row(j);
        CHECK((b0 < b1 || (b0 == b1 && f.at(b0, j - 1) >= f.at(b1, j))));
      }
    }
  }
  SUBCASE("serialization") {
    FeatureAllocation f(2);
    f.add_column({0, 3});
    CHECK(f.to_csv() == "row,col,count\n1,0,3\n");
    CHECK(f.to_json()["counts"] == nlohmann::json::parse("[[0],[3]]"));
    CHECK_THROWS_AS(f.add_column({0, 0}), DomainError);
    CHECK_THROWS_AS(f.add_column({1}), DomainError);
  }
}

TEST_CASE("urn schemes") {
  Rng rng(5);
  CHECK(dp_urn_step(std::vector<int>{}, 1.0, rng) == kFresh);
  const auto dp = dp_urn_probabilities(block_counts(std::vector<int>{0}), 1.0);
  CHECK(dp.existing[0] == doctest::Approx(0.5));
  const auto fsd = fsd_urn_probabilities(block_counts(std::vector<int>{0}), 1.0, 10);
  CHECK(fsd.existing[0] == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(fsd.fresh == doctest::Approx(0.45).epsilon(1e-15));
  const auto full = fsd_urn_probabilities(std::vector<int>{2, 1}, 1.0, 2);
  CHECK(full.fresh == 0.0);
  CHECK(full.existing[0] + full.existing[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(block_counts(std::vector<int>{1}), DomainError);

  for (int K : {1, 3, 7}) {
    std::vector<int> labels;
    int J = 0;
    for (int n = 0; n < 500; ++n) {
      int l = fsd_urn_step(labels, 2.0, K, rng);
      if (l == kFresh) l = J++;
      labels.push_back(l);
      CHECK(J <= K);
    }
  }
}

TEST_CASE("condition 1 with hand-picked constants") {
  const auto bb = ExpFamilyModel::beta_bernoulli(1, 1);
  const std::array<int, 2> Ks{10, 100};
  ConditionOptions opt;
  const auto ok = check_condition_1(bb, ConditionConstants{1, 0, 0, 0, 0}, 100, Ks, opt);
  CHECK(ok.entries[0].pass);
  CHECK(ok.entries[0].slack == doctest::Approx(0.0).scale(1.0));
  CHECK(std::abs(ok.entries[0].slack) < 1e-15);

  const auto bad = check_condition_1(bb, ConditionConstants{0.1, 0, 0, 0, 0}, 100, Ks, opt);
  CHECK_FALSE(bad.entries[0].pass);
  CHECK(bad.entries[0].failures == 99);  // every n >= 2; at n = 1 both sides equal 1
  CHECK(bad.entries[0].n_worst >= 2);
  CHECK_FALSE(bad.pass());
  const auto j = bad.to_json();
  CHECK(j["entries"][0]["pass"] == false);
  CHECK(j["entries"][0].contains("slack"));
}

TEST_CASE("condition 1 left-hand sides") {
  const auto gp = ExpFamilyModel::gamma_poisson(1.5, 2);
  for (int n : {1, 7, 300}) {
    // inequality 1 against the closed form
    CHECK(condition_lhs_total(gp, n).value == doctest::Approx(target_new_atom_total(gp, n)).epsilon(1e-11));
    for (int K : {3, 50}) {
      // inequality 3 by brute-force summation
      CHECK_THROWS_AS(condition_lhs_old(gp, K, n, 0.0), DomainError);
      for (double A : {1.0, 9.0}) {
        double l1 = 0;
        for (int x = 0; x < 3000; ++x) {
          const double p = target_predictive_pmf(gp, n, A, x);
          l1 += std::abs(p - approx_predictive_pmf(gp, K, n, A, x));
        }
        const auto c = condition_lhs_old(gp, K, n, A);
        CHECK(c.value == doctest::Approx(l1).epsilon(1e-9));
        CHECK(c.tail < 1e-12);
      }
      double l1 = 0;
      for (int x = 1; x < 3000; ++x)
        l1 += std::abs(target_new_atom_rate(gp, n, x) - K * approx_predictive_pmf(gp, K, n, 0.0, x));
      CHECK(condition_lhs_new(gp, K, n).value == doctest::Approx(l1).epsilon(1e-9));
      CHECK(condition_lhs_approx_total(gp, K, n).value ==
            doctest::Approx(1 - approx_predictive_pmf(gp, K, n, 0.0, 0)).epsilon(1e-10));
    }
  }
}

TEST_CASE("beta-negative binomial certified tails bound the brute-force sums") {
  const auto m = ExpFamilyModel::beta_negative_binomial(1, 2, 2);
  for (int n : {3, 6}) {
    for (double A : {1.0, 10.0}) {
      double l1 = 0;
      for (int x = 0; x < 100000; ++x)
        l1 += std::abs(target_predictive_pmf(m, n, A, x) - approx_predictive_pmf(m, 10, n, A, x));
      const auto c = condition_lhs_old(m, 10, n, A);
      CHECK(c.value >= l1 * (1 - 1e-12));
      CHECK(c.value == doctest::Approx(l1).epsilon(1e-9));
    }
    double tot = 0;
    for (int x = 1; x < 100000; ++x) tot += target_new_atom_rate(m, n, x);
    const auto c = condition_lhs_total(m, n);
    CHECK(c.value >= tot * (1 - 1e-12));
    CHECK(c.value == doctest::Approx(target_new_atom_total(m, n)).epsilon(1e-11));
  }
}

TEST_CASE("shipped presets pass condition 1") {
  const auto models = {ExpFamilyModel::beta_bernoulli(1, 1), ExpFamilyModel::beta_bernoulli(3, 0.5),
                       ExpFamilyModel::gamma_poisson(1, 1), ExpFamilyModel::gamma_poisson(2, 0.3),
                       ExpFamilyModel::beta_negative_binomial(1, 2, 1)};
  for (const auto& m : models) {
    const auto rep = check_condition_1(m, ConditionPreset::for_model(m), 10000, kKs);
    INFO(rep.to_json().dump());
    CHECK(rep.pass());
    CHECK(rep.entries.size() == 4);
    for (const auto& e : rep.entries) CHECK(e.checked > 0);
  }
}

TEST_CASE("serial and parallel condition checks agree") {
  const auto m = ExpFamilyModel::gamma_poisson(1, 1);
  ConditionOptions s, p;
  s.exec = Execution::Serial;
  p.exec = Execution::Parallel;
  const auto a = check_condition_1(m, ConditionPreset::for_model(m), 200, kKs, s);
  const auto b = check_condition_1(m, ConditionPreset::for_model(m), 200, kKs, p);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("model JSON") {
  const auto m = ExpFamilyModel::beta_negative_binomial(1, 2, 3);
  const auto back = ExpFamilyModel::from_json(m.to_json());
  CHECK(back.family() == m.family());
  CHECK(back.r() == 3);
  CHECK(back.concentration() == 2);
  CHECK_THROWS_AS(ExpFamilyModel::from_json(nlohmann::json::parse(R"({"family":"gamma_poisson","gamma":1,"lambda":1,"x":2})")),
                  DomainError);
  CHECK_THROWS_AS(ExpFamilyModel::beta_negative_binomial(1, 1, 1), DomainError);
  CHECK_THROWS_AS(ExpFamilyModel::from_json(nlohmann::json::parse(R"({"family":"nope"})")), DomainError);
}
