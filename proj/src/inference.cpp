#include "aifa/inference.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <numbers>

#include "aifa/errors.hpp"
#include "aifa/io.hpp"
#include "aifa/numeric.hpp"

namespace aifa {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kOneMinusUlp = 1.0 - 0x1p-53;

double lbeta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

double log_gamma_density(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1) * std::log(x) - rate * x;
}

double clamp_unit(double t) { return std::clamp(t, kTinyPositive, kOneMinusUlp); }

// Residuals E = Y - (X o W) Psi^T.
Eigen::MatrixXd residuals(const GibbsState& s, const Eigen::MatrixXd& Y) {
  const Eigen::MatrixXd xw = s.x.cast<double>().cwiseProduct(s.w);
  return Y - xw * s.psi.transpose();
}

void check_shapes(const LinearGaussianModel& m, const GibbsState& s, const Eigen::MatrixXd& Y) {
  if (s.K() != m.K || s.psi.rows() != m.D || s.psi.cols() != m.K || s.x.cols() != m.K || s.w.cols() != m.K ||
      s.w.rows() != s.x.rows() || Y.rows() != s.x.rows() || Y.cols() != m.D)
    throw DomainError("state dimensions do not match the model and data");
}

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value in ") + name);
}

// Adaptive rejection sampling for a log-concave density on [ul, uh].
class LogConcaveSampler {
 public:
  template <class H, class DH>
  static double sample(H h, DH dh, double ul, double uh, std::vector<double> init, Rng& rng) {
    std::vector<double> z;
    for (double u : init)
      if (u > ul && u < uh && std::isfinite(h(u))) z.push_back(u);
    if (z.empty()) z.push_back(0.5 * (ul + uh));
    std::sort(z.begin(), z.end());
    z.erase(std::unique(z.begin(), z.end()), z.end());
    for (int iter = 0; iter < 10000; ++iter) {
      const std::size_t n = z.size();
      std::vector<double> hz(n), dz(n), x(n + 1);
      for (std::size_t i = 0; i < n; ++i) {
        hz[i] = h(z[i]);
        dz[i] = dh(z[i]);
      }
      x[0] = ul;
      x[n] = uh;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double ds = dz[i] - dz[i + 1];
        double xi = std::abs(ds) > 1e-12 * (std::abs(dz[i]) + std::abs(dz[i + 1]) + 1e-300)
                        ? (hz[i + 1] - hz[i] - z[i + 1] * dz[i + 1] + z[i] * dz[i]) / ds
                        : 0.5 * (z[i] + z[i + 1]);
        x[i + 1] = std::clamp(xi, z[i], z[i + 1]);
      }
      // log mass of each envelope segment
      std::vector<double> lm(n);
      for (std::size_t i = 0; i < n; ++i) lm[i] = segment_log_mass(hz[i], dz[i], z[i], x[i], x[i + 1]);
      const double total = log_sum_exp(lm);
      double v = rng.uniform();
      std::size_t seg = 0;
      for (; seg + 1 < n; ++seg) {
        const double p = std::exp(lm[seg] - total);
        if (v < p) break;
        v -= p;
      }
      const double u = sample_segment(dz[seg], x[seg], x[seg + 1], rng);
      const double env = hz[seg] + dz[seg] * (u - z[seg]);
      if (rng.log_uniform() <= h(u) - env) return u;
      if (z.size() < 64 && u > ul && u < uh && std::isfinite(h(u))) {
        z.insert(std::upper_bound(z.begin(), z.end(), u), u);
        z.erase(std::unique(z.begin(), z.end()), z.end());
      }
    }
    throw NumericalError("adaptive rejection sampler did not accept");
  }

 private:
  // log of integral over [L, R] of exp(h + s (u - z))
  static double segment_log_mass(double h, double s, double z, double L, double R) {
    if (!(R > L)) return -kInf;
    const double w = R - L;
    const double base = h + s * (L - z);
    if (std::abs(s) * w < 1e-10) return base + std::log(w);
    if (s > 0) return h + s * (R - z) + std::log(-std::expm1(-s * w)) - std::log(s);
    return base + std::log(-std::expm1(s * w)) - std::log(-s);
  }
  static double sample_segment(double s, double L, double R, Rng& rng) {
    const double w = R - L;
    const double v = rng.uniform();
    if (std::abs(s) * w < 1e-10) return L + v * w;
    if (s > 0) return R + std::log1p(v * std::expm1(-s * w)) / s;
    return L + std::log1p(v * std::expm1(s * w)) / s;
  }
};

}  // namespace

std::string to_string(PriorKind k) { return k == PriorKind::Aifa ? "aifa" : "bondesson_tfa"; }

PriorKind prior_kind_from_string(const std::string& s) {
  if (s == "aifa") return PriorKind::Aifa;
  if (s == "bondesson_tfa") return PriorKind::BondessonTfa;
  throw DomainError("unknown prior kind '" + s + "'");
}

void LinearGaussianModel::validate() const {
  if (D < 1 || K < 1) throw DomainError("model: D and K must be at least 1");
  for (double v : {gamma, alpha, a_w, b_w, a_e, b_e, psi_var})
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("model: parameters must be positive and finite");
  if (prior == PriorKind::BondessonTfa && alpha != 1.0)
    throw UnsupportedError("Bondesson TFA Gibbs updates need alpha = 1");
}

nlohmann::json LinearGaussianModel::to_json() const {
  return {{"D", D},     {"K", K},     {"gamma", gamma}, {"alpha", alpha}, {"prior", to_string(prior)},
          {"a_w", a_w}, {"b_w", b_w}, {"a_e", a_e},     {"b_e", b_e},     {"psi_var", psi_var}};
}

LinearGaussianModel LinearGaussianModel::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"D",   "K",   "gamma", "alpha", "prior",
                                             "a_w", "b_w", "a_e",   "b_e",   "psi_var"};
  for (const auto& [k, _] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw DomainError("model: unknown field '" + k + "'");
  LinearGaussianModel m;
  m.D = j.at("D").get<int>();
  m.K = j.at("K").get<int>();
  m.gamma = j.value("gamma", m.gamma);
  m.alpha = j.value("alpha", m.alpha);
  if (j.contains("prior")) m.prior = prior_kind_from_string(j.at("prior").get<std::string>());
  m.a_w = j.value("a_w", m.a_w);
  m.b_w = j.value("b_w", m.b_w);
  m.a_e = j.value("a_e", m.a_e);
  m.b_e = j.value("b_e", m.b_e);
  m.psi_var = j.value("psi_var", m.psi_var);
  m.validate();
  return m;
}

BetaParams aifa_tau_conditional(int k, long x_column_sum, long N, const LinearGaussianModel& m) {
  if (k < 0 || k >= m.K) throw DomainError("atom index out of range");
  if (N < 0 || x_column_sum < 0 || x_column_sum > N) throw DomainError("column sum must lie in [0, N]");
  return {m.gamma * m.alpha / m.K + static_cast<double>(x_column_sum), m.alpha + static_cast<double>(N - x_column_sum)};
}

nlohmann::json GibbsState::to_json() const {
  auto vec = [](const auto& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
  };
  auto mat = [](const auto& M) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      nlohmann::json r = nlohmann::json::array();
      for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
      a.push_back(r);
    }
    return a;
  };
  return {{"tau", vec(tau)}, {"psi", mat(psi)}, {"x", mat(x)}, {"w", mat(w)}, {"gamma_w", gamma_w}, {"gamma_e", gamma_e}};
}

GibbsState GibbsState::from_json(const nlohmann::json& j) {
  auto mat = [](const nlohmann::json& a, auto& M) {
    const Eigen::Index r = static_cast<Eigen::Index>(a.size());
    const Eigen::Index c = r ? static_cast<Eigen::Index>(a[0].size()) : 0;
    M.resize(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      if (static_cast<Eigen::Index>(a[i].size()) != c) throw DomainError("ragged matrix in state");
      for (Eigen::Index k = 0; k < c; ++k) M(i, k) = a[i][k].get<typename std::decay_t<decltype(M)>::Scalar>();
    }
  };
  GibbsState s;
  const auto& t = j.at("tau");
  s.tau.resize(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) s.tau(static_cast<Eigen::Index>(i)) = t[i].get<double>();
  mat(j.at("psi"), s.psi);
  mat(j.at("x"), s.x);
  mat(j.at("w"), s.w);
  s.gamma_w = j.at("gamma_w").get<double>();
  s.gamma_e = j.at("gamma_e").get<double>();
  return s;
}

TruncatedDraw sample_truncated_beta(double a, double b, double lo, double hi, Rng& rng) {
  if (!(a >= 0.0) || !(b >= 1.0)) throw DomainError("truncated beta needs a >= 0, b >= 1");
  if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) throw DomainError("truncated beta needs 0 <= lo <= hi <= 1");
  if (hi - lo < 1e-14) return {0.5 * (lo + hi), true};
  if (a == 0.0 && lo == 0.0) throw DomainError("truncated beta with a = 0 needs lo > 0");

  if (a > 0.0) {
    // inversion of the regularized incomplete beta
    const double Flo = boost::math::ibeta(a, b, lo), Fhi = boost::math::ibeta(a, b, hi);
    const bool upper = Flo > 0.5;
    const double Glo = upper ? boost::math::ibetac(a, b, lo) : Flo;
    const double Ghi = upper ? boost::math::ibetac(a, b, hi) : Fhi;
    const double mass = upper ? Glo - Ghi : Ghi - Glo;
    const double scale = upper ? Glo : Ghi;
    if (mass > 1e-6 * scale && mass > 1e-290) {
      const double target = upper ? Glo - rng.uniform() * mass : Glo + rng.uniform() * mass;
      double l = lo, h = hi;
      for (int it = 0; it < 200 && h - l > 1e-12 * h; ++it) {
        const double mid = 0.5 * (l + h);
        const double F = upper ? boost::math::ibetac(a, b, mid) : boost::math::ibeta(a, b, mid);
        const bool below = upper ? F > target : F < target;
        (below ? l : h) = mid;
      }
      return {std::clamp(0.5 * (l + h), lo, hi), false};
    }
  }
  // log density in u = log theta: a u + (b - 1) log(1 - e^u)
  const double ul = std::log(std::max(lo, kTinyPositive));
  const double uh = std::log(hi);
  if (b == 1.0) {
    // exponential in u
    const double w = uh - ul, v = rng.uniform();
    const double u = std::abs(a) * w < 1e-10 ? ul + v * w : uh + std::log1p(v * std::expm1(-a * w)) / a;
    return {std::clamp(std::exp(u), lo, hi), false};
  }
  auto h = [&](double u) { return a * u + (b - 1) * log1m_exp(u); };
  auto dh = [&](double u) { return a - (b - 1) / std::expm1(-u); };
  std::vector<double> init{ul + 0.05 * (uh - ul), 0.5 * (ul + uh), uh - 0.05 * (uh - ul)};
  if (a > 0) init.push_back(std::log(a / (a + b - 1)));
  const double u = LogConcaveSampler::sample(h, dh, ul, uh, init, rng);
  return {std::clamp(std::exp(u), lo, hi), false};
}

TruncatedDraw tfa_tau_conditional_sample(const GibbsState& s, const LinearGaussianModel& m, int k, Rng& rng) {
  if (m.prior != PriorKind::BondessonTfa) throw DomainError("state does not use the Bondesson prior");
  if (k < 0 || k >= s.K()) throw DomainError("atom index out of range");
  const long N = s.N();
  const long mk = s.x.col(k).sum();
  const double a = (k == s.K() - 1 ? m.gamma : 0.0) + static_cast<double>(mk);
  const double b = static_cast<double>(N - mk) + 1.0;
  const double hi = k == 0 ? 1.0 : s.tau(k - 1);
  const double lo = k == s.K() - 1 ? 0.0 : s.tau(k + 1);
  return sample_truncated_beta(a, b, lo, std::min(hi, kOneMinusUlp), rng);
}

std::vector<std::pair<const char*, double>> LogJointTerms::named() const {
  return {{"tau_prior", tau_prior}, {"x_lik", x_lik},           {"w_prior", w_prior},
          {"psi_prior", psi_prior}, {"y_lik", y_lik},           {"gamma_w_prior", gamma_w_prior},
          {"gamma_e_prior", gamma_e_prior}};
}

LogJointTerms log_joint_terms(const LinearGaussianModel& m, const GibbsState& s, const Eigen::MatrixXd& Y) {
  check_shapes(m, s, Y);
  LogJointTerms t;
  const int K = s.K(), N = s.N();
  if (m.prior == PriorKind::Aifa) {
    const double e = m.gamma * m.alpha / K;
    for (int k = 0; k < K; ++k)
      t.tau_prior += (e - 1) * std::log(s.tau(k)) + (m.alpha - 1) * std::log1p(-s.tau(k)) - lbeta(e, m.alpha);
  } else {
    bool ordered = s.tau(0) < 1.0;
    for (int k = 1; k < K; ++k) ordered = ordered && s.tau(k) <= s.tau(k - 1);
    if (!ordered || !(s.tau(K - 1) > 0)) {
      t.tau_prior = -kInf;
    } else {
      t.tau_prior = K * std::log(m.gamma) + (m.gamma - 1) * std::log(s.tau(K - 1));
      for (int k = 0; k + 1 < K; ++k) t.tau_prior -= std::log(s.tau(k));
    }
  }
  for (int k = 0; k < K; ++k) {
    const long mk = s.x.col(k).sum();
    t.x_lik += mk * std::log(s.tau(k)) + (N - mk) * std::log1p(-s.tau(k));
  }
  t.w_prior = N * K * 0.5 * (std::log(s.gamma_w) - kLog2Pi) - 0.5 * s.gamma_w * s.w.squaredNorm();
  t.psi_prior = m.D * K * -0.5 * (std::log(m.psi_var) + kLog2Pi) - 0.5 * s.psi.squaredNorm() / m.psi_var;
  t.y_lik = N * m.D * 0.5 * (std::log(s.gamma_e) - kLog2Pi) - 0.5 * s.gamma_e * residuals(s, Y).squaredNorm();
  t.gamma_w_prior = log_gamma_density(s.gamma_w, m.a_w, m.b_w);
  t.gamma_e_prior = log_gamma_density(s.gamma_e, m.a_e, m.b_e);
  return t;
}

namespace {

Eigen::VectorXd sample_tau_prior(const LinearGaussianModel& m, Rng& rng) {
  Eigen::VectorXd tau(m.K);
  if (m.prior == PriorKind::Aifa) {
    for (int k = 0; k < m.K; ++k) tau(k) = clamp_unit(exp_positive(rng.log_beta(m.gamma * m.alpha / m.K, m.alpha).log_x));
  } else {
    double lp = 0.0;
    for (int k = 0; k < m.K; ++k) {
      lp += rng.log_beta(m.gamma, 1.0).log_x;
      tau(k) = clamp_unit(exp_positive(lp));
    }
  }
  return tau;
}

}  // namespace

GibbsState sample_prior_state(const LinearGaussianModel& m, int N, Rng& rng) {
  m.validate();
  if (N < 1) throw DomainError("N must be at least 1");
  GibbsState s;
  s.gamma_w = std::max(rng.gamma(m.a_w, m.b_w), kTinyPositive);
  s.gamma_e = std::max(rng.gamma(m.a_e, m.b_e), kTinyPositive);
  s.tau = sample_tau_prior(m, rng);
  s.psi.resize(m.D, m.K);
  for (int k = 0; k < m.K; ++k)
    for (int d = 0; d < m.D; ++d) s.psi(d, k) = rng.normal(0.0, std::sqrt(m.psi_var));
  s.x.resize(N, m.K);
  s.w.resize(N, m.K);
  const double sw = 1.0 / std::sqrt(s.gamma_w);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < m.K; ++k) {
      s.x(n, k) = rng.bernoulli(s.tau(k)) ? 1 : 0;
      s.w(n, k) = rng.normal(0.0, sw);
    }
  return s;
}

Eigen::MatrixXd sample_observations(const LinearGaussianModel& m, const GibbsState& s, Rng& rng) {
  Eigen::MatrixXd Y = s.x.cast<double>().cwiseProduct(s.w) * s.psi.transpose();
  const double se = 1.0 / std::sqrt(s.gamma_e);
  for (Eigen::Index n = 0; n < Y.rows(); ++n)
    for (int d = 0; d < m.D; ++d) Y(n, d) += rng.normal(0.0, se);
  return Y;
}

GibbsState initial_state(const LinearGaussianModel& m, int N, Rng& rng) {
  m.validate();
  GibbsState s;
  s.tau = sample_tau_prior(m, rng);
  s.psi.resize(m.D, m.K);
  for (int k = 0; k < m.K; ++k)
    for (int d = 0; d < m.D; ++d) s.psi(d, k) = rng.normal(0.0, std::sqrt(m.psi_var));
  s.x = Eigen::MatrixXi::Zero(N, m.K);
  s.w.resize(N, m.K);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < m.K; ++k) s.w(n, k) = rng.normal();
  s.gamma_w = 1.0;
  s.gamma_e = 1.0;
  return s;
}

void update_x(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng) {
  check_shapes(m, s, Y);
  Eigen::MatrixXd E = residuals(s, Y);
  const double sw = 1.0 / std::sqrt(s.gamma_w);
  for (int n = 0; n < s.N(); ++n)
    for (int k = 0; k < s.K(); ++k) {
      const auto psi = s.psi.col(k);
      Eigen::VectorXd r = E.row(n).transpose();
      if (s.x(n, k)) r += s.w(n, k) * psi;
      const double lam = s.gamma_w + s.gamma_e * psi.squaredNorm();
      const double proj = s.gamma_e * psi.dot(r);
      const double logit = std::log(s.tau(k)) - std::log1p(-s.tau(k)) + 0.5 * std::log(s.gamma_w / lam) +
                           0.5 * proj * proj / lam;
      const double p_on = logit >= 0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
      const bool on = rng.uniform() < p_on;
      s.x(n, k) = on ? 1 : 0;
      s.w(n, k) = on ? rng.normal(proj / lam, 1.0 / std::sqrt(lam)) : rng.normal(0.0, sw);
      if (on) r -= s.w(n, k) * psi;
      E.row(n) = r.transpose();
    }
}

void update_w(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng) {
  check_shapes(m, s, Y);
  const double sw = 1.0 / std::sqrt(s.gamma_w);
  std::vector<int> active;
  for (int n = 0; n < s.N(); ++n) {
    active.clear();
    for (int k = 0; k < s.K(); ++k) {
      if (s.x(n, k))
        active.push_back(k);
      else
        s.w(n, k) = rng.normal(0.0, sw);
    }
    if (active.empty()) continue;
    const int A = static_cast<int>(active.size());
    Eigen::MatrixXd PsiA(m.D, A);
    for (int i = 0; i < A; ++i) PsiA.col(i) = s.psi.col(active[i]);
    Eigen::MatrixXd P = s.gamma_e * PsiA.transpose() * PsiA;
    P.diagonal().array() += s.gamma_w;
    const Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success) throw NumericalError("w precision is not positive definite");
    const Eigen::VectorXd mean = llt.solve(s.gamma_e * PsiA.transpose() * Y.row(n).transpose());
    Eigen::VectorXd z(A);
    for (int i = 0; i < A; ++i) z(i) = rng.normal();
    const Eigen::VectorXd draw = mean + llt.matrixU().solve(z);
    for (int i = 0; i < A; ++i) s.w(n, active[i]) = draw(i);
  }
}

void update_psi(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng) {
  check_shapes(m, s, Y);
  Eigen::MatrixXd E = residuals(s, Y);
  const Eigen::MatrixXd xw = s.x.cast<double>().cwiseProduct(s.w);
  for (int k = 0; k < s.K(); ++k) {
    const Eigen::VectorXd c = xw.col(k);
    E += c * s.psi.col(k).transpose();
    const double prec = 1.0 / m.psi_var + s.gamma_e * c.squaredNorm();
    const Eigen::VectorXd mean = s.gamma_e * (E.transpose() * c) / prec;
    const double sd = 1.0 / std::sqrt(prec);
    for (int d = 0; d < m.D; ++d) s.psi(d, k) = rng.normal(mean(d), sd);
    E -= c * s.psi.col(k).transpose();
  }
}

void update_precisions(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng) {
  check_shapes(m, s, Y);
  const double NK = static_cast<double>(s.N()) * s.K();
  const double ND = static_cast<double>(s.N()) * m.D;
  const double rate_w = m.b_w + 0.5 * s.w.squaredNorm();
  const double rate_e = m.b_e + 0.5 * residuals(s, Y).squaredNorm();
  require_finite(rate_w, "w");
  require_finite(rate_e, "gamma_e rate");
  s.gamma_w = std::max(rng.gamma(m.a_w + 0.5 * NK, rate_w), kTinyPositive);
  s.gamma_e = std::max(rng.gamma(m.a_e + 0.5 * ND, rate_e), kTinyPositive);
}

int update_tau(const LinearGaussianModel& m, GibbsState& s, Rng& rng) {
  const long N = s.N();
  int degenerate = 0;
  for (int k = 0; k < s.K(); ++k) {
    if (m.prior == PriorKind::Aifa) {
      const BetaParams p = aifa_tau_conditional(k, s.x.col(k).sum(), N, m);
      s.tau(k) = clamp_unit(exp_positive(rng.log_beta(p.a, p.b).log_x));
    } else {
      const TruncatedDraw d = tfa_tau_conditional_sample(s, m, k, rng);
      s.tau(k) = d.value;
      degenerate += d.degenerate;
    }
  }
  return degenerate;
}

namespace {

enum Term { TauPrior, XLik, WPrior, PsiPrior, YLik, GwPrior, GePrior };

std::array<double, 7> as_array(const LogJointTerms& t) {
  return {t.tau_prior, t.x_lik, t.w_prior, t.psi_prior, t.y_lik, t.gamma_w_prior, t.gamma_e_prior};
}

template <class F>
void audited(const char* block, std::initializer_list<Term> blanket, const LinearGaussianModel& m, GibbsState& s,
             const Eigen::MatrixXd& Y, bool audit, F&& update) {
  if (!audit) {
    update();
    return;
  }
  const auto before = as_array(log_joint_terms(m, s, Y));
  update();
  const auto after = as_array(log_joint_terms(m, s, Y));
  static const char* names[] = {"tau_prior", "x_lik", "w_prior", "psi_prior", "y_lik", "gamma_w_prior", "gamma_e_prior"};
  for (int t = 0; t < 7; ++t) {
    if (std::find(blanket.begin(), blanket.end(), static_cast<Term>(t)) != blanket.end()) continue;
    if (before[t] != after[t] && !(std::isnan(before[t]) && std::isnan(after[t])))
      throw NumericalError(std::string(block) + " update changed " + names[t] + " outside its Markov blanket");
  }
}

}  // namespace

void gibbs_sweep(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng,
                 const SweepOptions& opt) {
  check_shapes(m, s, Y);
  if (!Y.allFinite()) throw NumericalError("non-finite value in observations Y");
  audited("x", {XLik, WPrior, YLik}, m, s, Y, opt.audit, [&] { update_x(m, s, Y, rng); });
  audited("w", {WPrior, YLik}, m, s, Y, opt.audit, [&] { update_w(m, s, Y, rng); });
  audited("psi", {PsiPrior, YLik}, m, s, Y, opt.audit, [&] { update_psi(m, s, Y, rng); });
  audited("precisions", {GwPrior, GePrior, WPrior, YLik}, m, s, Y, opt.audit,
          [&] { update_precisions(m, s, Y, rng); });
  audited("tau", {TauPrior, XLik}, m, s, Y, opt.audit, [&] { update_tau(m, s, rng); });
  require_finite(s.gamma_w, "gamma_w");
  require_finite(s.gamma_e, "gamma_e");
  if (!s.tau.allFinite()) throw NumericalError("non-finite value in tau");
  if (!s.psi.allFinite()) throw NumericalError("non-finite value in psi");
  if (!s.w.allFinite()) throw NumericalError("non-finite value in w");
}

std::string ChainResult::trace_csv() const {
  CsvTable t({"sweep", "stat_name", "value"});
  for (const auto& st : trace) {
    t.row() << st.sweep << "active_per_row" << st.active_per_row;
    t.row() << st.sweep << "tau_mean" << st.tau_mean;
    t.row() << st.sweep << "gamma_w" << st.gamma_w;
    t.row() << st.sweep << "gamma_e" << st.gamma_e;
    t.row() << st.sweep << "log_joint" << st.log_joint;
  }
  return t.str();
}

ChainResult run_chain(const LinearGaussianModel& m, const Eigen::MatrixXd& Y, const ChainOptions& opt, Rng& rng) {
  if (opt.sweeps < 1 || opt.burnin < 0 || opt.thin < 1) throw DomainError("chain options out of range");
  ChainResult r;
  GibbsState s = initial_state(m, static_cast<int>(Y.rows()), rng);
  for (int it = 1; it <= opt.sweeps; ++it) {
    gibbs_sweep(m, s, Y, rng);
    r.trace.push_back({it, s.x.cast<double>().sum() / s.N(), s.tau.mean(), s.gamma_w, s.gamma_e,
                       log_joint_terms(m, s, Y).total()});
    if (it > opt.burnin && (it - opt.burnin) % opt.thin == 0) r.samples.push_back(s);
  }
  return r;
}

std::vector<ChainResult> run_chains(const LinearGaussianModel& m, const Eigen::MatrixXd& Y, const ChainOptions& opt,
                                    int chains, std::uint64_t master, Execution exec) {
  if (chains < 1) throw DomainError("need at least one chain");
  return run_replicates(
      static_cast<std::size_t>(chains), master, [&](std::size_t, Rng& rng) { return run_chain(m, Y, opt, rng); },
      exec);
}

namespace {

// log N(y; 0, Sigma) for the w-marginal covariance of one pattern.
struct PatternDensity {
  double log_weight;
  double log_norm;  // -0.5 (D log 2 pi + log det Sigma)
  Eigen::LLT<Eigen::MatrixXd> llt;

  double log_density(const Eigen::VectorXd& y) const {
    return log_norm - 0.5 * llt.matrixL().solve(y).squaredNorm();
  }
};

PatternDensity make_pattern(const GibbsState& s, const std::vector<int>& active, double log_weight) {
  const Eigen::Index D = s.psi.rows();
  Eigen::MatrixXd Sigma = Eigen::MatrixXd::Identity(D, D) / s.gamma_e;
  for (int k : active) Sigma += s.psi.col(k) * s.psi.col(k).transpose() / s.gamma_w;
  PatternDensity p{log_weight, 0.0, Eigen::LLT<Eigen::MatrixXd>(Sigma)};
  if (p.llt.info() != Eigen::Success) throw NumericalError("predictive covariance is not positive definite");
  const double logdet = 2.0 * p.llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  p.log_norm = -0.5 * (D * kLog2Pi + logdet);
  return p;
}

}  // namespace

double predictive_log_likelihood(const std::vector<GibbsState>& samples, const Eigen::MatrixXd& heldout, Rng& rng,
                                 const PredictiveOptions& opt) {
  if (samples.empty()) throw DomainError("predictive log-likelihood needs at least one sample");
  if (heldout.rows() < 1) throw DomainError("no held-out rows");
  const Eigen::Index R = heldout.rows();
  // per_sample(s, r) = log p(y_r | sample s)
  Eigen::MatrixXd per_sample(static_cast<Eigen::Index>(samples.size()), R);
  for (std::size_t si = 0; si < samples.size(); ++si) {
    const GibbsState& s = samples[si];
    if (s.psi.rows() != heldout.cols()) throw DomainError("held-out dimension mismatch");
    const int K = s.K();
    std::vector<PatternDensity> pats;
    std::vector<int> active;
    if (K <= opt.exact_max_K) {
      for (std::uint32_t mask = 0; mask < (1u << K); ++mask) {
        double lw = 0;
        active.clear();
        for (int k = 0; k < K; ++k) {
          const bool on = (mask >> k) & 1u;
          lw += on ? std::log(s.tau(k)) : std::log1p(-s.tau(k));
          if (on) active.push_back(k);
        }
        if (lw == -kInf) continue;
        pats.push_back(make_pattern(s, active, lw));
      }
    } else {
      const double lw = -std::log(static_cast<double>(opt.mc_draws));
      for (int d = 0; d < opt.mc_draws; ++d) {
        active.clear();
        for (int k = 0; k < K; ++k)
          if (rng.uniform() < s.tau(k)) active.push_back(k);
        pats.push_back(make_pattern(s, active, lw));
      }
    }
    std::vector<double> terms(pats.size());
    for (Eigen::Index r = 0; r < R; ++r) {
      const Eigen::VectorXd y = heldout.row(r).transpose();
      for (std::size_t p = 0; p < pats.size(); ++p) terms[p] = pats[p].log_weight + pats[p].log_density(y);
      per_sample(static_cast<Eigen::Index>(si), r) = log_sum_exp(terms);
    }
  }
  const double logS = std::log(static_cast<double>(samples.size()));
  CompensatedSum total;
  std::vector<double> col(samples.size());
  for (Eigen::Index r = 0; r < R; ++r) {
    for (std::size_t si = 0; si < samples.size(); ++si) col[si] = per_sample(static_cast<Eigen::Index>(si), r);
    total += log_sum_exp(col) - logS;
  }
  return total.value() / static_cast<double>(R);
}

PriorComparison compare_priors(const LinearGaussianModel& base, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& heldout,
                               const ChainOptions& opt, int chains, std::uint64_t master, Execution exec) {
  PriorComparison out;
  for (PriorKind prior : {PriorKind::Aifa, PriorKind::BondessonTfa}) {
    LinearGaussianModel m = base;
    m.prior = prior;
    if (prior == PriorKind::BondessonTfa) m.alpha = 1.0;
    const std::vector<ChainResult> runs = run_chains(m, Y, opt, chains, derive_seed(master, 0), exec);
    std::vector<GibbsState> pooled;
    std::vector<double> per_chain;
    for (std::size_t c = 0; c < runs.size(); ++c) {
      Rng rng(derive_seed(master, 1 + c));
      per_chain.push_back(predictive_log_likelihood(runs[c].samples, heldout, rng));
      pooled.insert(pooled.end(), runs[c].samples.begin(), runs[c].samples.end());
    }
    Rng rng(derive_seed(master, 1 + runs.size()));
    const double ll = predictive_log_likelihood(pooled, heldout, rng);
    if (prior == PriorKind::Aifa) {
      out.aifa_ll = ll;
      out.aifa_chain_ll = per_chain;
    } else {
      out.tfa_ll = ll;
      out.tfa_chain_ll = per_chain;
    }
  }
  out.rel_gap = std::abs(out.aifa_ll - out.tfa_ll) / std::min(std::abs(out.aifa_ll), std::abs(out.tfa_ll));
  return out;
}

SyntheticData generate_synthetic(int N, int D, int features, double p_on, double noise_sd, Rng& rng) {
  if (N < 1 || D < 1 || features < 1) throw DomainError("synthetic data needs N, D, features >= 1");
  if (!(p_on > 0 && p_on < 1) || !(noise_sd > 0)) throw DomainError("synthetic data needs p_on in (0,1), noise_sd > 0");
  SyntheticData out;
  GibbsState& t = out.truth;
  t.tau = Eigen::VectorXd::Constant(features, p_on);
  t.psi.resize(D, features);
  for (int k = 0; k < features; ++k)
    for (int d = 0; d < D; ++d) t.psi(d, k) = rng.normal();
  t.x.resize(N, features);
  t.w.resize(N, features);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < features; ++k) {
      t.x(n, k) = rng.bernoulli(p_on) ? 1 : 0;
      t.w(n, k) = rng.normal();
    }
  t.gamma_w = 1.0;
  t.gamma_e = 1.0 / (noise_sd * noise_sd);
  out.Y = t.x.cast<double>().cwiseProduct(t.w) * t.psi.transpose();
  for (int n = 0; n < N; ++n)
    for (int d = 0; d < D; ++d) out.Y(n, d) += rng.normal(0.0, noise_sd);
  return out;
}

std::string observations_csv(const Eigen::MatrixXd& Y) { return observations_to_csv(Y); }

bool GewekeResult::pass(double z_max) const {
  return std::all_of(moments.begin(), moments.end(), [&](const GewekeMoment& g) { return std::abs(g.z) <= z_max; });
}

GewekeResult geweke_test(const LinearGaussianModel& m, int N, int draws, std::uint64_t seed, int batches) {
  m.validate();
  if (draws < batches || batches < 2) throw DomainError("Geweke test needs draws >= batches >= 2");
  auto stats = [](const GibbsState& s) {
    return std::array<double, 3>{s.x.cast<double>().sum(), s.tau.mean(), s.gamma_e};
  };
  const char* names[] = {"sum_x", "tau_mean", "gamma_e"};

  // marginal-conditional
  std::vector<std::array<double, 6>> mc(draws), sc(draws);
  Rng rng_mc(derive_seed(seed, 0));
  for (int i = 0; i < draws; ++i) {
    const GibbsState s = sample_prior_state(m, N, rng_mc);
    const auto g = stats(s);
    mc[i] = {g[0], g[1], g[2], g[0] * g[0], g[1] * g[1], g[2] * g[2]};
  }
  // successive-conditional
  Rng rng_sc(derive_seed(seed, 1));
  GibbsState s = sample_prior_state(m, N, rng_sc);
  Eigen::MatrixXd Y = sample_observations(m, s, rng_sc);
  for (int i = 0; i < draws; ++i) {
    gibbs_sweep(m, s, Y, rng_sc);
    Y = sample_observations(m, s, rng_sc);
    const auto g = stats(s);
    sc[i] = {g[0], g[1], g[2], g[0] * g[0], g[1] * g[1], g[2] * g[2]};
  }

  GewekeResult res;
  const int per = draws / batches;
  for (int j = 0; j < 6; ++j) {
    double mm = 0, mv = 0;
    for (const auto& v : mc) mm += v[j];
    mm /= draws;
    for (const auto& v : mc) mv += (v[j] - mm) * (v[j] - mm);
    mv /= draws - 1;
    std::vector<double> bm(batches, 0.0);
    for (int b = 0; b < batches; ++b) {
      for (int i = b * per; i < (b + 1) * per; ++i) bm[b] += sc[i][j];
      bm[b] /= per;
    }
    double sm = 0;
    for (double v : bm) sm += v;
    sm /= batches;
    double bv = 0;
    for (double v : bm) bv += (v - sm) * (v - sm);
    bv /= batches - 1;
    const double se = std::sqrt(mv / draws + bv / batches);
    const std::string name = j < 3 ? std::string(names[j]) : std::string(names[j - 3]) + "^2";
    res.moments.push_back({name, mm, sm, se, se > 0 ? (mm - sm) / se : 0.0});
  }
  return res;
}

}  // namespace aifa
