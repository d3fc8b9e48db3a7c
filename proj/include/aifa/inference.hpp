#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "aifa/parallel.hpp"
#include "aifa/rng.hpp"

namespace aifa {

enum class PriorKind { Aifa, BondessonTfa };
std::string to_string(PriorKind k);
PriorKind prior_kind_from_string(const std::string& s);

// Linear-Gaussian feature model with a beta-process (d = 0) prior:
//   y_n = sum_k x_nk w_nk psi_k + N(0, I / gamma_e),
//   w_nk ~ N(0, 1 / gamma_w), psi_k ~ N(0, psi_var I), x_nk ~ Bernoulli(tau_k).
// Aifa: tau_k ~ Beta(gamma alpha / K, alpha) iid.
// BondessonTfa (alpha = 1): tau_k = prod_{j <= k} p_j, p_j ~ Beta(gamma, 1).
struct LinearGaussianModel {
  int D = 1;
  int K = 1;
  double gamma = 1.0;
  double alpha = 1.0;
  PriorKind prior = PriorKind::Aifa;
  double a_w = 1e-6, b_w = 1e-6;  // Gamma(shape, rate) on gamma_w
  double a_e = 1e-6, b_e = 1e-6;  // Gamma(shape, rate) on gamma_e
  double psi_var = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LinearGaussianModel from_json(const nlohmann::json& j);
};

struct BetaParams {
  double a, b;
  bool operator==(const BetaParams&) const = default;
};

// Complete conditional of tau_k under the AIFA prior given its column sum.
BetaParams aifa_tau_conditional(int k, long x_column_sum, long N, const LinearGaussianModel& m);

struct GibbsState {
  Eigen::VectorXd tau;  // K
  Eigen::MatrixXd psi;  // D x K, column k is psi_k
  Eigen::MatrixXi x;    // N x K, entries 0/1
  Eigen::MatrixXd w;    // N x K
  double gamma_w = 1.0;
  double gamma_e = 1.0;

  int N() const { return static_cast<int>(x.rows()); }
  int K() const { return static_cast<int>(tau.size()); }
  nlohmann::json to_json() const;
  static GibbsState from_json(const nlohmann::json& j);
};

// Draw of a truncated law, flagged when the interval was degenerate.
struct TruncatedDraw {
  double value;
  bool degenerate;
};

// Beta(a, b) restricted to [lo, hi], a >= 0, b >= 1 (a = 0 needs lo > 0).
// Inversion of the regularized incomplete beta when well conditioned,
// otherwise adaptive rejection sampling in log(theta).
TruncatedDraw sample_truncated_beta(double a, double b, double lo, double hi, Rng& rng);

// Complete conditional draw of tau_k under the Bondesson prior.
TruncatedDraw tfa_tau_conditional_sample(const GibbsState& s, const LinearGaussianModel& m, int k, Rng& rng);

// Unnormalized joint log-density, split by factor.
struct LogJointTerms {
  double tau_prior = 0, x_lik = 0, w_prior = 0, psi_prior = 0, y_lik = 0, gamma_w_prior = 0, gamma_e_prior = 0;
  double total() const { return tau_prior + x_lik + w_prior + psi_prior + y_lik + gamma_w_prior + gamma_e_prior; }
  std::vector<std::pair<const char*, double>> named() const;
};
LogJointTerms log_joint_terms(const LinearGaussianModel& m, const GibbsState& s, const Eigen::MatrixXd& Y);

// Prior draw of every latent variable (precisions from their hyperpriors).
GibbsState sample_prior_state(const LinearGaussianModel& m, int N, Rng& rng);
// Y | state.
Eigen::MatrixXd sample_observations(const LinearGaussianModel& m, const GibbsState& s, Rng& rng);
// Starting point for a chain: tau and psi from the prior, no active
// features, unit precisions.
GibbsState initial_state(const LinearGaussianModel& m, int N, Rng& rng);

// Individual conditional updates, in sweep order.
void update_x(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng);
void update_w(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng);
void update_psi(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng);
void update_precisions(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng);
// Returns the number of degenerate truncation intervals met.
int update_tau(const LinearGaussianModel& m, GibbsState& s, Rng& rng);

struct SweepOptions {
  // Recompute the joint terms around every block and throw NumericalError if
  // a term outside the block's Markov blanket changes.
  bool audit = false;
};

// x -> w -> psi -> precisions -> tau. Throws NumericalError naming the
// variable if anything becomes non-finite.
void gibbs_sweep(const LinearGaussianModel& m, GibbsState& s, const Eigen::MatrixXd& Y, Rng& rng,
                 const SweepOptions& opt = {});

struct ChainStats {
  int sweep;
  double active_per_row, tau_mean, gamma_w, gamma_e, log_joint;
};

struct ChainResult {
  std::vector<ChainStats> trace;    // every sweep
  std::vector<GibbsState> samples;  // kept after burn-in, every `thin` sweeps
  std::string trace_csv() const;    // sweep,stat_name,value
};

struct ChainOptions {
  int sweeps = 1000;
  int burnin = 500;
  int thin = 10;
};

ChainResult run_chain(const LinearGaussianModel& m, const Eigen::MatrixXd& Y, const ChainOptions& opt, Rng& rng);
// Chain c uses derive_seed(master, c).
std::vector<ChainResult> run_chains(const LinearGaussianModel& m, const Eigen::MatrixXd& Y, const ChainOptions& opt,
                                    int chains, std::uint64_t master, Execution exec = Execution::Parallel);

struct PredictiveOptions {
  int exact_max_K = 12;   // enumerate x exactly up to this K
  int mc_draws = 200;     // x draws per (sample, row) otherwise
};

// Mean over held-out rows of log (1/S sum_s p(y | sample s)), with w
// integrated out: y | x ~ N(0, I / gamma_e + Psi_x Psi_x^T / gamma_w).
double predictive_log_likelihood(const std::vector<GibbsState>& samples, const Eigen::MatrixXd& heldout, Rng& rng,
                                 const PredictiveOptions& opt = {});

// AIFA and Bondesson-TFA chains on the same data, started from the same
// master seed. Both use `base` with its prior replaced; the TFA run forces
// alpha = 1. Predictive log-likelihoods pool every chain's samples.
struct PriorComparison {
  double aifa_ll = 0, tfa_ll = 0;
  std::vector<double> aifa_chain_ll, tfa_chain_ll;
  // |aifa - tfa| / min(|aifa|, |tfa|)
  double rel_gap = 0;
};
PriorComparison compare_priors(const LinearGaussianModel& base, const Eigen::MatrixXd& Y, const Eigen::MatrixXd& heldout,
                               const ChainOptions& opt, int chains, std::uint64_t master,
                               Execution exec = Execution::Parallel);

struct SyntheticData {
  Eigen::MatrixXd Y;
  GibbsState truth;
};
// `features` true features with psi_k ~ N(0, I), x_nk ~ Bernoulli(p_on),
// w_nk ~ N(0, 1), noise sd `noise_sd`.
SyntheticData generate_synthetic(int N, int D, int features, double p_on, double noise_sd, Rng& rng);
std::string observations_csv(const Eigen::MatrixXd& Y);  // row,dim,value

struct GewekeMoment {
  std::string name;
  double mc_mean, sc_mean, std_error, z;
};
struct GewekeResult {
  std::vector<GewekeMoment> moments;  // first and second moments of each statistic
  bool pass(double z_max = 3.0) const;
};
// Marginal-conditional vs successive-conditional simulators of the joint
// model; statistics sum x, mean tau, gamma_e.
GewekeResult geweke_test(const LinearGaussianModel& m, int N, int draws, std::uint64_t seed, int batches = 50);

}  // namespace aifa
