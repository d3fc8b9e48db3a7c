#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aifa/analysis.hpp"
#include "aifa/approximations.hpp"
#include "aifa/errors.hpp"
#include "aifa/inference.hpp"
#include "aifa/io.hpp"
#include "aifa/marginals.hpp"
#include "aifa/parallel.hpp"
#include "aifa/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aifa;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<long> replicates;
  std::optional<int> threads;
};

// Resolved run context shared by every subcommand.
struct Run {
  std::string subcommand;
  json payload;  // config minus the run-level keys
  json config;   // config as read
  std::uint64_t seed = 0;
  long replicates = 0;
  fs::path out;
  std::vector<std::string> outputs;
  std::vector<std::string> failures;

  void write(const std::string& name, const std::string& content) {
    write_file_atomic(out / name, content);
    outputs.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
  void fail(std::string what) { failures.push_back(std::move(what)); }
};

// Reads keys of a JSON object and rejects the ones never asked for.
class Payload {
 public:
  Payload(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw DomainError(where_ + ": expected a JSON object");
  }
  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key).get<T>() : fallback;
  }
  template <class T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw DomainError(where_ + ": missing field '" + key + "'");
    return j_.at(key).get<T>();
  }
  const json& sub(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw DomainError(where_ + ": missing field '" + key + "'");
    return j_.at(key);
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw DomainError(where_ + ": unknown field '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::uint64_t parse_u64(const std::string& s, const char* what) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw DomainError(std::string(what) + ": not an unsigned 64-bit integer: '" + s + "'");
  return v;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// ------------------------------------------------------------ subcommands

void sample_prior(Run& run) {
  Payload p(run.payload, "sample-prior");
  const WeightDistribution dist = WeightDistribution::from_json(p.sub("distribution"));
  const long keep = p.get<long>("weights_csv_replicates", 1000);
  p.finish();
  struct Rep {
    double total = 0, first = 0, active = 0;
    long clamped = 0;
    std::vector<double> weights;
  };
  const auto reps = run_replicates(static_cast<std::size_t>(run.replicates), run.seed, [&](std::size_t r, Rng& rng) {
    Rep out;
    std::vector<double> w = sample_weights(dist, rng);
    out.first = w.empty() ? 0.0 : w[0];
    for (double v : w) {
      out.total += v;
      if (v > 1.0) ++out.clamped;
      out.active += rng.bernoulli(std::min(v, 1.0)) ? 1 : 0;
    }
    if (static_cast<long>(r) < keep) out.weights = std::move(w);
    return out;
  });
  CsvTable t({"replicate", "atom", "weight"});
  std::vector<double> total, first, active;
  long clamped = 0;
  for (std::size_t r = 0; r < reps.size(); ++r) {
    for (std::size_t k = 0; k < reps[r].weights.size(); ++k) t.row() << r << k << reps[r].weights[k];
    total.push_back(reps[r].total);
    first.push_back(reps[r].first);
    active.push_back(reps[r].active);
    clamped += reps[r].clamped;
  }
  run.write("weights.csv", t.str());
  const double n = static_cast<double>(reps.size());
  run.write_json("summary.json", {{"distribution", dist.to_json()},
                                  {"replicates", run.replicates},
                                  {"mean_total_mass", mean_of(total)},
                                  {"mean_first_weight", mean_of(first)},
                                  {"mean_first_weight_se", std::sqrt(var_of(first) / n)},
                                  {"mean_active_count", mean_of(active)},
                                  {"mean_active_count_se", std::sqrt(var_of(active) / n)},
                                  {"var_active_count", var_of(active)},
                                  {"weights_above_one", clamped}});
}

void marginal_sim(Run& run) {
  Payload p(run.payload, "marginal-sim");
  const ExpFamilyModel model = ExpFamilyModel::from_json(p.sub("model"));
  const int N = p.require<int>("N");
  const std::string source = p.get<std::string>("source", "target");
  const int K = p.get<int>("K", 0);
  p.finish();
  if (N < 1) throw DomainError("marginal-sim: N must be at least 1");
  AllocationSource src;
  if (source == "target")
    src = AllocationSource::target();
  else if (source == "aifa")
    src = AllocationSource::aifa(K);
  else
    throw DomainError("marginal-sim: source must be 'target' or 'aifa'");
  struct Rep {
    double columns = 0, total = 0;
    std::string csv;
  };
  const auto reps = run_replicates(static_cast<std::size_t>(run.replicates), run.seed, [&](std::size_t r, Rng& rng) {
    const FeatureAllocation f = simulate_allocation(model, N, src, rng);
    Rep out;
    out.columns = f.cols();
    for (int c = 0; c < f.cols(); ++c)
      for (int v : f.column(c)) out.total += v;
    if (r == 0) out.csv = f.to_csv();
    return out;
  });
  CsvTable t({"replicate", "columns", "total_count"});
  std::vector<double> cols;
  for (std::size_t r = 0; r < reps.size(); ++r) {
    t.row() << r << reps[r].columns << reps[r].total;
    cols.push_back(reps[r].columns);
  }
  run.write("counts.csv", t.str());
  if (!reps.empty()) run.write("allocation_0.csv", reps[0].csv);
  json summary = {{"model", model.to_json()}, {"N", N},           {"source", source},
                  {"replicates", run.replicates}, {"mean_columns", mean_of(cols)}, {"var_columns", var_of(cols)}};
  if (src.kind == AllocationSource::Kind::Aifa) summary["K"] = K;
  if (src.kind == AllocationSource::Kind::Target) {
    double expected = 0;
    for (int n = 1; n <= N; ++n) expected += target_new_atom_total(model, n);
    summary["expected_columns"] = expected;
  }
  run.write_json("summary.json", summary);
}

void check_conditions(Run& run) {
  Payload p(run.payload, "check-conditions");
  const ExpFamilyModel model = ExpFamilyModel::from_json(p.sub("model"));
  const int n_max = p.require<int>("n_max");
  const std::vector<int> Ks = p.require<std::vector<int>>("K");
  std::optional<ConditionConstants> constants;
  if (p.has("constants")) {
    Payload c(p.sub("constants"), "check-conditions.constants");
    constants = ConditionConstants{c.require<double>("C1"), c.require<double>("C2"), c.require<double>("C3"),
                                   c.require<double>("C4"), c.require<double>("C5")};
    c.finish();
  }
  p.finish();
  const ConditionReport rep = constants ? check_condition_1(model, *constants, n_max, Ks)
                                        : check_condition_1(model, ConditionPreset::for_model(model), n_max, Ks);
  CsvTable t({"inequality", "K", "n_worst", "A_worst", "lhs", "rhs", "slack", "rel_slack", "checked", "skipped",
              "failures", "pass"});
  for (const auto& e : rep.entries) {
    t.row() << e.inequality << e.K << e.n_worst << e.A_worst << e.lhs << e.rhs << e.slack << e.rel_slack << e.checked
            << e.skipped << e.failures << (e.pass ? "true" : "false");
    if (!e.pass)
      run.fail("inequality " + std::to_string(e.inequality) + " at K=" + std::to_string(e.K) + ": " +
               std::to_string(e.failures) + " failures, worst n=" + std::to_string(e.n_worst));
  }
  run.write("conditions.csv", t.str());
  run.write_json("report.json", rep.to_json());
}

void bounds_table(Run& run) {
  Payload p(run.payload, "bounds-table");
  const double gamma = p.get<double>("gamma", 1.0);
  const int K_min = p.get<int>("K_min", 1);
  const int K_max = p.get<int>("K_max", 100);
  const json evaluate = p.get<json>("evaluate", json::array());
  p.finish();
  if (K_min < 1 || K_max < K_min) throw DomainError("bounds-table: need 1 <= K_min <= K_max");
  const double C = binom_poisson_lower_constant(gamma);
  CsvTable t({"K", "q", "tv", "tv_lower", "tv_upper", "lower_bound", "upper_bound", "lower_ok", "upper_ok"});
  for (int K = K_min; K <= K_max; ++K) {
    const double q = (gamma / K) / (1.0 + gamma / K);
    const TvResult tv = tv_binom_poisson(K, gamma);
    const double lo = C * K * q * q, hi = K * q * q;
    const bool lo_ok = lo <= tv.lower, hi_ok = tv.upper <= hi;
    t.row() << K << q << tv.value << tv.lower << tv.upper << lo << hi << (lo_ok ? "true" : "false")
            << (hi_ok ? "true" : "false");
    if (!lo_ok) run.fail("lower bound exceeds TV at K=" + std::to_string(K));
    if (!hi_ok) run.fail("TV exceeds upper bound at K=" + std::to_string(K));
  }
  run.write("binom_poisson.csv", t.str());
  if (!evaluate.empty()) {
    CsvTable e({"name", "args", "value"});
    for (const auto& item : evaluate) {
      Payload ip(item, "bounds-table.evaluate");
      const auto name = ip.require<std::string>("name");
      const auto args = ip.require<std::vector<double>>("args");
      ip.finish();
      std::string joined;
      for (std::size_t i = 0; i < args.size(); ++i) joined += (i ? ";" : "") + format_double(args[i]);
      e.row() << name << joined << evaluate_bound(name, args);
    }
    run.write("evaluators.csv", e.str());
  }
  run.write_json("summary.json", {{"gamma", gamma}, {"C_gamma", C}, {"K_min", K_min}, {"K_max", K_max}});
}

void eppf_conv(Run& run) {
  Payload p(run.payload, "eppf-convergence");
  const double alpha = p.get<double>("alpha", 1.0);
  const int N = p.get<int>("N", 4);
  const std::vector<int> Ks = p.get<std::vector<int>>("K", {4, 16, 64, 256});
  const double target = p.get<double>("slope_target", -1.0);
  const double tol = p.get<double>("slope_tol", 0.3);
  p.finish();
  const auto rows = eppf_convergence(alpha, N, Ks);
  CsvTable t({"K", "composition", "p_K", "p_target", "abs_gap"});
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_comp;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    t.row() << r.K << r.composition << r.p_K << r.p_target << r.abs_gap;
    if (!by_comp.count(r.composition)) order.push_back(r.composition);
    by_comp[r.composition].first.push_back(r.K);
    by_comp[r.composition].second.push_back(r.abs_gap);
  }
  run.write("eppf.csv", t.str());
  CsvTable s({"composition", "slope", "decreasing", "pass"});
  for (const auto& c : order) {
    const auto& [k, g] = by_comp[c];
    const double slope = loglog_slope(k, g);
    bool dec = true;
    for (std::size_t i = 1; i < g.size(); ++i) dec = dec && g[i] < g[i - 1];
    const bool ok = dec && std::abs(slope - target) <= tol;
    s.row() << c << slope << (dec ? "true" : "false") << (ok ? "true" : "false");
    if (!ok) run.fail("composition " + c + ": slope " + format_double(slope) + (dec ? "" : ", not decreasing"));
  }
  run.write("slopes.csv", s.str());
}

struct DataSplit {
  Eigen::MatrixXd Y, heldout;
};

// Synthetic block: {N, D, features, p_on, noise_sd, heldout_N}.
DataSplit synthetic_data(const json& j, std::uint64_t seed, Run& run) {
  Payload p(j, "synthetic");
  const int N = p.require<int>("N");
  const int D = p.require<int>("D");
  const int features = p.require<int>("features");
  const double p_on = p.get<double>("p_on", 0.5);
  const double noise = p.get<double>("noise_sd", 0.5);
  const int held = p.get<int>("heldout_N", 0);
  p.finish();
  Rng rng(derive_seed(seed, 0xD47A));
  const SyntheticData data = generate_synthetic(N + held, D, features, p_on, noise, rng);
  DataSplit out{data.Y.topRows(N), data.Y.bottomRows(held)};
  run.write("data.csv", observations_to_csv(out.Y));
  if (held > 0) run.write("heldout.csv", observations_to_csv(out.heldout));
  run.write_json("truth.json", data.truth.to_json());
  return out;
}

ChainOptions chain_options(Payload& p) {
  ChainOptions o;
  o.sweeps = p.get<int>("sweeps", o.sweeps);
  o.burnin = p.get<int>("burnin", o.burnin);
  o.thin = p.get<int>("thin", o.thin);
  return o;
}

LinearGaussianModel model_from(json j, Payload& p, Eigen::Index D) {
  if (!j.contains("D")) j["D"] = D;
  if (p.has("K")) j["K"] = p.require<int>("K");
  if (p.has("prior_kind")) j["prior"] = p.require<std::string>("prior_kind");
  const LinearGaussianModel m = LinearGaussianModel::from_json(j);
  if (m.D != D) throw DomainError("model D does not match the data dimension");
  return m;
}

void gibbs_run(Run& run) {
  Payload p(run.payload, "gibbs-run");
  DataSplit data;
  if (p.has("data_path")) {
    data.Y = read_observations_csv(p.require<std::string>("data_path"));
    if (p.has("heldout_path")) data.heldout = read_observations_csv(p.require<std::string>("heldout_path"));
  } else {
    data = synthetic_data(p.sub("synthetic"), run.seed, run);
  }
  const LinearGaussianModel m = model_from(p.get<json>("model", json::object()), p, data.Y.cols());
  const ChainOptions opt = chain_options(p);
  const int chains = p.get<int>("chains", 1);
  p.finish();
  const auto runs = run_chains(m, data.Y, opt, chains, derive_seed(run.seed, 1));
  json summary = {{"model", m.to_json()}, {"chains", chains}, {"sweeps", opt.sweeps},
                  {"burnin", opt.burnin}, {"thin", opt.thin}, {"per_chain", json::array()}};
  std::vector<GibbsState> pooled;
  for (int c = 0; c < chains; ++c) {
    const auto& r = runs[c];
    run.write("trace_chain" + std::to_string(c) + ".csv", r.trace_csv());
    if (!r.samples.empty()) run.write_json("state_chain" + std::to_string(c) + ".json", r.samples.back().to_json());
    double active = 0;
    for (const auto& s : r.samples) active += s.x.cast<double>().sum() / s.N();
    json pc = {{"chain", c},
               {"samples", r.samples.size()},
               {"final_log_joint", r.trace.back().log_joint},
               {"mean_active_per_row", r.samples.empty() ? 0.0 : active / r.samples.size()}};
    summary["per_chain"].push_back(pc);
    pooled.insert(pooled.end(), r.samples.begin(), r.samples.end());
  }
  if (data.heldout.rows() > 0 && !pooled.empty()) {
    Rng rng(derive_seed(run.seed, 2));
    summary["predictive_log_likelihood"] = predictive_log_likelihood(pooled, data.heldout, rng);
  }
  run.write_json("summary.json", summary);
}

void compare_ifa(Run& run) {
  Payload p(run.payload, "compare-ifa");
  const DataSplit data = synthetic_data(p.sub("synthetic"), run.seed, run);
  if (data.heldout.rows() == 0) throw DomainError("compare-ifa: synthetic.heldout_N must be positive");
  json mj = p.get<json>("model", json::object());
  mj["K"] = p.get<int>("K", 20);
  if (!mj.contains("D")) mj["D"] = data.Y.cols();
  const LinearGaussianModel base = LinearGaussianModel::from_json(mj);
  const ChainOptions opt = chain_options(p);
  const int chains = p.get<int>("chains", 3);
  const double tol = p.get<double>("rel_tol", 0.05);
  p.finish();
  const PriorComparison cmp = compare_priors(base, data.Y, data.heldout, opt, chains, derive_seed(run.seed, 1));
  CsvTable t({"prior", "chain", "predictive_ll"});
  for (int c = 0; c < chains; ++c) t.row() << "aifa" << std::to_string(c) << cmp.aifa_chain_ll[c];
  t.row() << "aifa" << "pooled" << cmp.aifa_ll;
  for (int c = 0; c < chains; ++c) t.row() << "bondesson_tfa" << std::to_string(c) << cmp.tfa_chain_ll[c];
  t.row() << "bondesson_tfa" << "pooled" << cmp.tfa_ll;
  run.write("compare.csv", t.str());
  run.write_json("summary.json", {{"K", base.K},
                                  {"chains", chains},
                                  {"aifa_predictive_ll", cmp.aifa_ll},
                                  {"tfa_predictive_ll", cmp.tfa_ll},
                                  {"rel_gap", cmp.rel_gap},
                                  {"rel_tol", tol}});
  if (!(cmp.rel_gap <= tol)) run.fail("relative predictive gap " + format_double(cmp.rel_gap) + " exceeds " + format_double(tol));
}

const std::map<std::string, std::pair<void (*)(Run&), long>> kCommands = {
    {"sample-prior", {sample_prior, 1000}},   {"marginal-sim", {marginal_sim, 100}},
    {"check-conditions", {check_conditions, 1}}, {"bounds-table", {bounds_table, 1}},
    {"eppf-convergence", {eppf_conv, 1}},     {"gibbs-run", {gibbs_run, 1}},
    {"compare-ifa", {compare_ifa, 1}}};

int execute(const std::string& name, const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  Run run;
  run.subcommand = name;
  run.config = read_json_file(o.config_path);
  if (!run.config.is_object()) throw DomainError("config must be a JSON object");
  run.payload = run.config;
  std::optional<std::uint64_t> cfg_seed;
  if (run.payload.contains("seed")) cfg_seed = run.payload.at("seed").get<std::uint64_t>();
  std::optional<long> cfg_reps;
  if (run.payload.contains("replicates")) cfg_reps = run.payload.at("replicates").get<long>();
  std::optional<int> cfg_threads;
  if (run.payload.contains("threads")) cfg_threads = run.payload.at("threads").get<int>();
  for (const char* k : {"seed", "replicates", "threads"}) run.payload.erase(k);

  if (o.seed)
    run.seed = *o.seed;
  else if (const char* env = std::getenv("BNP_SEED"))
    run.seed = parse_u64(env, "BNP_SEED");
  else if (cfg_seed)
    run.seed = *cfg_seed;
  else
    throw DomainError("no seed: pass --seed, set BNP_SEED, or add \"seed\" to the config");
  run.replicates = o.replicates.value_or(cfg_reps.value_or(kCommands.at(name).second));
  if (run.replicates < 1) throw DomainError("replicates must be positive");
  const int threads = o.threads.value_or(cfg_threads.value_or(thread_count()));
  if (threads < 1) throw DomainError("threads must be positive");
  set_thread_count(threads);
  run.out = o.out;

  kCommands.at(name).first(run);

  Manifest man;
  man.subcommand = name;
  man.config = run.config;
  man.seed = run.seed;
  man.replicates = run.replicates;
  man.threads = threads;
  man.pass = run.failures.empty();
  man.outputs = run.outputs;
  man.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json mj = man.to_json();
  mj["failures"] = run.failures;
  write_file_atomic(run.out / "manifest.json", mj.dump(2) + "\n");
  if (!run.failures.empty()) {
    std::cerr << json{{"status", "checks_failed"}, {"subcommand", name}, {"failures", run.failures}}.dump() << "\n";
    return 1;
  }
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const DomainError*>(&e)) return "domain_error";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical_error";
  if (dynamic_cast<const UnsupportedError*>(&e)) return "unsupported";
  if (dynamic_cast<const json::exception*>(&e)) return "invalid_config";
  return "error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite approximations of completely random measures: experiments and checks"};
  app.require_subcommand(1);
  Options o;
  std::string seed_text;
  for (const auto& [name, _] : kCommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", o.config_path, "JSON config file")->required();
    sub->add_option("--seed", seed_text, "master seed (unsigned 64-bit)");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option_function<long>("--replicates", [&](long v) { o.replicates = v; }, "replicate count");
    sub->add_option_function<int>("--threads", [&](int v) { o.threads = v; }, "OpenMP threads");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (!seed_text.empty()) o.seed = parse_u64(seed_text, "--seed");
    return execute(name, o);
  } catch (const std::exception& e) {
    std::cerr << json{{"status", "error"}, {"subcommand", name}, {"kind", error_kind(e)}, {"message", e.what()}}.dump()
              << "\n";
    return 2;
  }
}
