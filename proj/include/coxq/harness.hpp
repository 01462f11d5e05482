#pragma once

// Experiment runner behind the coxq command-line tool: parses an experiment
// configuration, runs one study and assembles a JSON report whose pass/fail
// verdicts derive only from numbers recorded in the report.
//
// Only public operations of the other modules are used here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "coxq/analytic.hpp"
#include "coxq/env.hpp"
#include "coxq/errors.hpp"
#include "coxq/json.hpp"
#include "coxq/ldp.hpp"
#include "coxq/random.hpp"
#include "coxq/sim.hpp"
#include "coxq/stats.hpp"

namespace coxq {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kReportSchemaVersion = 1;

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {"analytic",   "simulate", "clt-check",
                                                 "fclt-check", "ldp-check", "corr-check"};
  return kinds;
}

/// Pass/fail thresholds; every criterion reads its tolerance from here.
struct Tolerances {
  double se_multiple = 3.0;          ///< simulated moments vs analytic targets
  double variance_rel = 0.10;        ///< CLT variance ratio
  double ad_p_min = 0.01;            ///< Anderson-Darling normality
  double covariance_rel = 0.10;      ///< FCLT covariance entries
  double correlation_rel = 0.10;     ///< stationary correlation
  double slope_rel = 0.10;           ///< LDP slope vs rate
  double is_rel_err_max = 0.10;      ///< IS relative error at every N
  double is_rel_err_warn = 0.30;
  double trichotomy_rel = 0.02;      ///< exact / asymptotic variance at the largest N
  double pgf_abs = 1e-10;
  double stationarity_max = 1e-6;
  double dual_route_abs = 1e-9;
};

struct ExperimentConfig {
  std::string kind = "analytic";
  EnvSpec env;
  std::vector<double> mu = {1.0};
  double delta = 1.0;
  double alpha = 1.0;
  std::vector<std::int64_t> N_grid = {1};
  std::vector<double> grid = {1.0};  ///< readout times; "t" sets a single time
  std::vector<double> a;
  std::int64_t replications = 1000;
  std::uint64_t seed = 1;
  std::string output = "out";
  std::vector<double> rho0;  ///< fluid start; defaults to E Lambda / mu_i
  std::vector<std::int64_t> initial_counts;
  double warmup = 0.0;
  bool stationary = false;
  bool write_trajectories = true;
  std::string ldp_target = "queue";
  CellResolution resolution;
  double event_budget = 1e9;
  unsigned threads = 0;
  Tolerances tolerances;

  double t() const { return grid.back(); }
};

namespace harness {

template <class T>
std::vector<T> scalar_or_array(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_array()) return v.get<std::vector<T>>();
  if (v.is_number()) return {v.get<T>()};
  throw ConfigError(std::string("field '") + key + "' must be a number or an array of numbers");
}

inline void check_kind(const std::string& kind) {
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ConfigError("unknown experiment kind '" + kind + "'");
}

}  // namespace harness

/// Builds an ExperimentConfig from JSON. `kind` (if non-empty) is the
/// subcommand and must agree with a "kind" field when one is present.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::string& kind = "") {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  ExperimentConfig c;
  try {
    if (j.contains("kind")) c.kind = j.at("kind").get<std::string>();
    if (!kind.empty()) {
      if (j.contains("kind") && c.kind != kind)
        throw ConfigError("config kind '" + c.kind + "' does not match subcommand '" + kind + "'");
      c.kind = kind;
    }
    harness::check_kind(c.kind);
    if (!j.contains("env")) throw ConfigError("field 'env' is required");
    c.env = env_from_json(j.at("env"));
    if (j.contains("mu")) c.mu = harness::scalar_or_array<double>(j, "mu");
    if (j.contains("delta")) c.delta = j.at("delta").get<double>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("N")) c.N_grid = {j.at("N").get<std::int64_t>()};
    if (j.contains("N_grid")) c.N_grid = harness::scalar_or_array<std::int64_t>(j, "N_grid");
    if (j.contains("t")) c.grid = {j.at("t").get<double>()};
    if (j.contains("grid")) c.grid = harness::scalar_or_array<double>(j, "grid");
    if (j.contains("a")) c.a = harness::scalar_or_array<double>(j, "a");
    if (j.contains("replications")) c.replications = j.at("replications").get<std::int64_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    if (j.contains("rho0")) c.rho0 = harness::scalar_or_array<double>(j, "rho0");
    if (j.contains("initial_counts"))
      c.initial_counts = harness::scalar_or_array<std::int64_t>(j, "initial_counts");
    if (j.contains("warmup")) c.warmup = j.at("warmup").get<double>();
    if (j.contains("stationary")) c.stationary = j.at("stationary").get<bool>();
    if (j.contains("write_trajectories")) c.write_trajectories = j.at("write_trajectories").get<bool>();
    if (j.contains("ldp_target")) c.ldp_target = j.at("ldp_target").get<std::string>();
    if (j.contains("event_budget")) c.event_budget = j.at("event_budget").get<double>();
    if (j.contains("threads")) c.threads = j.at("threads").get<unsigned>();
    if (j.contains("resolution")) {
      const auto& r = j.at("resolution");
      if (r.contains("exact_slots")) c.resolution.exact_slots = r.at("exact_slots").get<bool>();
      if (r.contains("relative")) c.resolution.relative = r.at("relative").get<double>();
      if (r.contains("min_scaled_length"))
        c.resolution.min_scaled_length = r.at("min_scaled_length").get<double>();
    }
    if (j.contains("tolerances")) {
      const auto& t = j.at("tolerances");
      auto& o = c.tolerances;
      const std::pair<const char*, double*> fields[] = {
          {"se_multiple", &o.se_multiple},       {"variance_rel", &o.variance_rel},
          {"ad_p_min", &o.ad_p_min},             {"covariance_rel", &o.covariance_rel},
          {"correlation_rel", &o.correlation_rel}, {"slope_rel", &o.slope_rel},
          {"is_rel_err_max", &o.is_rel_err_max}, {"is_rel_err_warn", &o.is_rel_err_warn},
          {"trichotomy_rel", &o.trichotomy_rel}, {"pgf_abs", &o.pgf_abs},
          {"stationarity_max", &o.stationarity_max}, {"dual_route_abs", &o.dual_route_abs}};
      for (const auto& [key, ptr] : fields)
        if (t.contains(key)) *ptr = t.at(key).get<double>();
      for (const auto& item : t.items()) {
        bool known = false;
        for (const auto& f : fields) known = known || item.key() == f.first;
        if (!known) throw ConfigError("unknown tolerance '" + item.key() + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }

  // Up-front validation with messages that name the offending field.
  QueueParams(c.mu).validate();
  if (!(c.delta > 0.0)) throw ConfigError("delta must be > 0");
  if (!(c.alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (c.N_grid.empty()) throw ConfigError("N_grid must not be empty");
  for (std::size_t i = 0; i < c.N_grid.size(); ++i) {
    if (c.N_grid[i] < 1) throw ConfigError("N_grid entries must be positive integers");
    if (i > 0 && c.N_grid[i] <= c.N_grid[i - 1]) throw ConfigError("N_grid must be strictly increasing");
  }
  if (c.grid.empty()) throw ConfigError("grid (or t) must not be empty");
  for (std::size_t i = 0; i < c.grid.size(); ++i) {
    if (!(c.grid[i] >= 0.0)) throw ConfigError("grid times must be >= 0");
    if (i > 0 && c.grid[i] < c.grid[i - 1]) throw ConfigError("grid times must be sorted");
  }
  if (c.replications < 1) throw ConfigError("replications must be >= 1");
  if (!c.rho0.empty() && c.rho0.size() != c.mu.size())
    throw ConfigError("rho0 must have one entry per service rate");
  if (!c.initial_counts.empty() && c.initial_counts.size() != c.mu.size())
    throw ConfigError("initial_counts must have one entry per service rate");
  if (c.ldp_target != "queue" && c.ldp_target != "proxy")
    throw ConfigError("ldp_target must be 'queue' or 'proxy'");

  const std::size_t d = c.mu.size();
  if (c.kind == "clt-check" && d != 1) throw ConfigError("clt-check needs exactly one service rate");
  if (c.kind == "clt-check" || c.kind == "corr-check" || c.kind == "fclt-check" || c.kind == "ldp-check")
    if (c.replications < 2) throw ConfigError(c.kind + " needs at least two replications");
  if ((c.kind == "fclt-check" || c.kind == "corr-check") && d < 2)
    throw ConfigError(c.kind + " needs at least two service rates");
  if (c.kind == "simulate" && c.N_grid.size() != 1)
    throw ConfigError("simulate runs a single N; give 'N' or a one-element N_grid");
  if (c.kind == "ldp-check") {
    if (d != 1) throw ConfigError("ldp-check needs exactly one service rate");
    if (c.a.size() != 1) throw ConfigError("ldp-check needs one tail level 'a'");
    if (c.N_grid.size() < 2) throw ConfigError("ldp-check needs at least two N values for the slope");
    if (!(c.t() > 0.0)) throw ConfigError("ldp-check needs t > 0");
    const double rho = fluid_level(c.env, c.mu[0], c.t());
    if (!(c.a[0] > rho))
      throw ConfigError("ldp-check: a = " + format_number(c.a[0]) + " must exceed rho(t) = " +
                        format_number(rho) + "; the event is not rare");
  }
  return c;
}

inline ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["kind"] = c.kind;
  j["env"] = to_json_value(c.env);
  j["mu"] = c.mu;
  j["delta"] = c.delta;
  j["alpha"] = c.alpha;
  j["N_grid"] = c.N_grid;
  j["grid"] = c.grid;
  if (!c.a.empty()) j["a"] = c.a;
  j["replications"] = c.replications;
  j["seed"] = c.seed;
  if (!c.rho0.empty()) j["rho0"] = c.rho0;
  if (!c.initial_counts.empty()) j["initial_counts"] = c.initial_counts;
  j["warmup"] = c.warmup;
  j["stationary"] = c.stationary;
  j["write_trajectories"] = c.write_trajectories;
  j["ldp_target"] = c.ldp_target;
  j["resolution"] = {{"exact_slots", c.resolution.exact_slots},
                     {"relative", c.resolution.relative},
                     {"min_scaled_length", c.resolution.min_scaled_length}};
  j["event_budget"] = c.event_budget;
  j["threads"] = c.threads;
  const auto& t = c.tolerances;
  j["tolerances"] = {{"se_multiple", t.se_multiple},       {"variance_rel", t.variance_rel},
                     {"ad_p_min", t.ad_p_min},             {"covariance_rel", t.covariance_rel},
                     {"correlation_rel", t.correlation_rel}, {"slope_rel", t.slope_rel},
                     {"is_rel_err_max", t.is_rel_err_max}, {"is_rel_err_warn", t.is_rel_err_warn},
                     {"trichotomy_rel", t.trichotomy_rel}, {"pgf_abs", t.pgf_abs},
                     {"stationarity_max", t.stationarity_max}, {"dual_route_abs", t.dual_route_abs}};
  return j;
}

struct Criterion {
  std::string name;
  double value;
  double target;
  double tolerance;
  bool pass;
};

struct RunResult {
  ordered_json report;
  std::vector<Criterion> criteria;
  std::optional<Trajectory> trajectory;
  std::optional<MomentReport> moments;
  std::optional<ordered_json> rates;
  std::vector<std::string> warnings;

  bool all_pass() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.pass; });
  }
};

namespace harness {

/// |value - target| <= tolerance.
inline Criterion within(std::string name, double value, double target, double tolerance) {
  return {std::move(name), value, target, tolerance, std::abs(value - target) <= tolerance};
}

/// Per-N stream seed: independent of the other N values and of threads.
inline std::uint64_t seed_for(const ExperimentConfig& c, std::size_t index) {
  return RandomStream::derive(c.seed, index).next_u64();
}

inline SimConfig base_sim(const ExperimentConfig& c, std::int64_t n, std::uint64_t seed) {
  SimConfig s;
  s.env = c.env;
  s.queues = QueueParams(c.mu);
  s.scaling = ScalingRegime(n, c.alpha, c.delta);
  s.grid = c.grid;
  s.horizon = c.grid.back();
  s.initial_counts = c.initial_counts;
  s.warmup = c.warmup;
  s.seed = seed;
  s.replications = c.replications;
  s.resolution = c.resolution;
  s.event_budget = c.event_budget;
  s.threads = c.threads;
  return s;
}

inline std::vector<double> column(const std::vector<std::vector<double>>& rows, std::size_t i) {
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = rows[r][i];
  return out;
}

inline ordered_json with_se(double value, double se) { return {{"value", value}, {"se", se}}; }

inline void finish(RunResult& out, const ExperimentConfig& c, ordered_json results) {
  ordered_json report;
  report["schema_version"] = kReportSchemaVersion;
  report["tool"] = {{"name", "coxq"}, {"version", kToolVersion}};
  report["kind"] = c.kind;
  report["seed"] = c.seed;
  report["config"] = config_to_json(c);
  report["results"] = std::move(results);
  ordered_json crit = ordered_json::array();
  for (const auto& k : out.criteria)
    crit.push_back({{"name", k.name},
                    {"value", k.value},
                    {"target", k.target},
                    {"tolerance", k.tolerance},
                    {"pass", k.pass}});
  report["criteria"] = crit;
  report["all_pass"] = out.all_pass();
  report["warnings"] = out.warnings;
  out.report = std::move(report);
}

}  // namespace harness

/// Analytic quantities of the instance; checks the variance trichotomy over
/// N_grid and, for a deterministic law, the Poisson form of the PGF.
inline RunResult run_analytic(const ExperimentConfig& c) {
  RunResult out;
  ordered_json results;
  const double t = c.t();
  const auto& tol = c.tolerances;
  ordered_json queues = ordered_json::array();
  const bool deterministic = c.env.family_name() == "deterministic";
  for (std::size_t i = 0; i < c.mu.size(); ++i) {
    const double mu = c.mu[i];
    ordered_json q;
    q["mu"] = mu;
    q["stationary_mean"] = stationary_mean(c.env, mu);
    q["stationary_variance"] = stationary_variance(c.env, mu, c.delta);
    q["clt_sigma2"] = clt_sigma2(c.env, mu, c.delta, c.alpha);
    const auto tm = transient_moments(c.env, mu, c.delta, t);
    q["transient"] = {{"t", t}, {"mean", tm.mean}, {"variance", tm.variance}};
    const double r0 = c.rho0.empty() ? c.env.mean() / mu : c.rho0[i];
    q["fluid"] = {{"t", t}, {"rho0", r0}, {"value", fluid_limit(r0, c.env, mu, t)}};
    ordered_json pgf = ordered_json::array();
    double pgf_err = 0.0;
    for (double z : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto p = stationary_pgf(c.env, mu, c.delta, z);
      pgf.push_back({{"z", z}, {"value", p.value}, {"tail_bound", p.tail_bound}, {"terms", p.terms}});
      if (deterministic) pgf_err = std::max(pgf_err, std::abs(p.value - std::exp(c.env.mean() / mu * (z - 1.0))));
    }
    q["pgf"] = pgf;
    if (deterministic)
      out.criteria.push_back(harness::within("pgf_poisson_form[" + std::to_string(i) + "]", pgf_err, 0.0, tol.pgf_abs));

    ordered_json sv = ordered_json::array();
    std::vector<double> gaps;
    for (auto n : c.N_grid) {
      const auto v = scaled_variance(c.env, mu, ScalingRegime(n, c.alpha, c.delta));
      const double ratio = v.exact / v.asymptotic;
      gaps.push_back(std::abs(ratio - 1.0));
      sv.push_back({{"N", n}, {"exact", v.exact}, {"asymptotic", v.asymptotic}, {"ratio", ratio}});
    }
    q["scaled_variance"] = sv;
    if (c.N_grid.size() >= 2) {
      bool monotone = true;
      for (std::size_t k = 1; k < gaps.size(); ++k) monotone = monotone && gaps[k] <= gaps[k - 1];
      out.criteria.push_back({"trichotomy_monotone[" + std::to_string(i) + "]", monotone ? 1.0 : 0.0, 1.0, 0.0,
                              monotone});
      out.criteria.push_back(
          harness::within("trichotomy_ratio[" + std::to_string(i) + "]", 1.0 + gaps.back(), 1.0, tol.trichotomy_rel));
    }
    queues.push_back(q);
  }
  results["regime"] = to_string(regime_of(c.alpha));
  results["queues"] = queues;
  if (c.mu.size() >= 2) {
    std::vector<double> r0 = c.rho0;
    if (r0.empty())
      for (double mu : c.mu) r0.push_back(c.env.mean() / mu);
    results["fclt_covariance"] = {{"t", t},
                                  {"matrix", to_json_value(fclt_covariance(c.env, QueueParams(c.mu), c.delta,
                                                                           c.alpha, r0, t)
                                                               .matrix)}};
    ordered_json corr = ordered_json::array();
    for (std::size_t i = 0; i < c.mu.size(); ++i)
      for (std::size_t k = i + 1; k < c.mu.size(); ++k) {
        const auto cr = stationary_correlation(c.env, c.mu[i], c.mu[k], c.delta, c.alpha);
        corr.push_back({{"i", i}, {"k", k}, {"corr", cr.corr}, {"c", cr.c_const}});
      }
    results["stationary_correlation"] = corr;
  }
  if (!c.a.empty()) {
    RateQuery q{c.env, c.mu, c.delta, c.alpha, t, c.a};
    const auto r = c.mu.size() == 1 ? decay_rate(q) : rate_multivariate(q);
    results["decay_rate"] = to_json_value(r);
    out.rates = ordered_json::array({to_json_value(r)});
  }
  harness::finish(out, c, std::move(results));
  return out;
}

/// Simulates one instance; with warmup or stationary sampling the endpoint is
/// compared with the analytic mean, variance and dispersion ratio.
inline RunResult run_simulate(const ExperimentConfig& c) {
  RunResult out;
  const std::int64_t n = c.N_grid.front();
  auto sim = harness::base_sim(c, n, c.seed);
  Trajectory traj = c.stationary ? sample_stationary(sim) : simulate(sim);
  ordered_json results;
  results["N"] = n;
  results["method"] = c.stationary ? "stationary" : "forward";
  if (traj.replications >= 2) {
    auto moments = estimate_moments(traj);
    results["moments"] = to_json_value(moments);
    // Targets need an empty start so the analytic transient law applies.
    const bool empty_start = c.stationary || std::all_of(c.initial_counts.begin(), c.initial_counts.end(),
                                                         [](std::int64_t v) { return v == 0; });
    const auto& last = moments.grid.back();
    const double time = c.stationary ? kInf : c.warmup + traj.grid.back();
    if (empty_start && time > 0.0) {
      const auto scaling = ScalingRegime(n, c.alpha, c.delta);
      const double nn = static_cast<double>(n);
      const std::size_t g = traj.grid.size() - 1;
      ordered_json targets = ordered_json::array();
      for (std::size_t i = 0; i < traj.d; ++i) {
        double mean_t, var_t;
        if (std::isinf(time)) {
          mean_t = nn * stationary_mean(c.env, c.mu[i]);
          var_t = scaled_variance(c.env, c.mu[i], scaling).exact;
        } else {
          const auto tm = transient_moments(c.env, c.mu[i], scaling.slot_length(), time);
          mean_t = nn * tm.mean;
          var_t = nn * tm.mean + nn * nn * (tm.variance - tm.mean);
        }
        std::vector<double> col(static_cast<std::size_t>(traj.replications));
        for (std::int64_t r = 0; r < traj.replications; ++r)
          col[static_cast<std::size_t>(r)] = static_cast<double>(traj.count(r, g, i));
        const auto s = summarize(col);
        const double ratio = s.variance / s.mean;
        const double ratio_se = s.dispersion_ratio_se();
        const double k = c.tolerances.se_multiple;
        const std::string tag = "[" + std::to_string(i) + "]";
        out.criteria.push_back(harness::within("mean" + tag, s.mean, mean_t, k * s.mean_se));
        out.criteria.push_back(harness::within("variance" + tag, s.variance, var_t, k * s.variance_se));
        out.criteria.push_back(harness::within("dispersion_ratio" + tag, ratio, var_t / mean_t, k * ratio_se));
        targets.push_back({{"queue", i},
                           {"time", time},
                           {"mean", harness::with_se(s.mean, s.mean_se)},
                           {"mean_target", mean_t},
                           {"variance", harness::with_se(s.variance, s.variance_se)},
                           {"variance_target", var_t},
                           {"dispersion_ratio", harness::with_se(ratio, ratio_se)},
                           {"dispersion_ratio_target", var_t / mean_t}});
      }
      results["endpoint"] = targets;
    }
    out.moments = std::move(moments);
  }
  if (c.write_trajectories) out.trajectory = std::move(traj);
  harness::finish(out, c, std::move(results));
  return out;
}

/// Stationary endpoints normalized by N^{beta/2}: variance against the limit
/// variance and Anderson-Darling normality, per N; criteria at the largest N.
inline RunResult run_clt_check(const ExperimentConfig& c) {
  RunResult out;
  const double mu = c.mu[0];
  const double sigma2 = clt_sigma2(c.env, mu, c.delta, c.alpha);
  const std::vector<double> center = {stationary_mean(c.env, mu)};
  ordered_json per_n = ordered_json::array();
  double last_ratio = 0.0, last_p = 0.0;
  for (std::size_t k = 0; k < c.N_grid.size(); ++k) {
    const auto n = c.N_grid[k];
    auto sim = harness::base_sim(c, n, harness::seed_for(c, k));
    const auto traj = sample_stationary(sim);
    const auto z = harness::column(normalized_endpoint(traj, sim.scaling, center, 0.0), 0);
    const auto s = summarize(z);
    const auto ad = anderson_darling_normal(z);
    const double ratio = s.variance / sigma2;
    per_n.push_back({{"N", n},
                     {"mean", harness::with_se(s.mean, s.mean_se)},
                     {"variance", harness::with_se(s.variance, s.variance_se)},
                     {"sigma2", sigma2},
                     {"ratio", harness::with_se(ratio, s.variance_se / sigma2)},
                     {"skewness", s.m3 / std::pow(s.variance, 1.5)},
                     {"anderson_darling", {{"statistic", ad.statistic},
                                           {"adjusted", ad.adjusted_statistic},
                                           {"p_value", ad.p_value}}}});
    last_ratio = ratio;
    last_p = ad.p_value;
  }
  out.criteria.push_back(harness::within("variance_ratio", last_ratio, 1.0, c.tolerances.variance_rel));
  out.criteria.push_back({"anderson_darling_p", last_p, c.tolerances.ad_p_min, 0.0, last_p > c.tolerances.ad_p_min});
  ordered_json results;
  results["regime"] = to_string(regime_of(c.alpha));
  results["per_N"] = per_n;
  harness::finish(out, c, std::move(results));
  return out;
}

/// Covariance of U(t) = N^{beta/2}(M(t)/N - rho(t)) from a fluid-consistent
/// start, against the limiting covariance, per N and grid time.
inline RunResult run_fclt_check(const ExperimentConfig& c) {
  RunResult out;
  const std::size_t d = c.mu.size();
  const QueueParams queues(c.mu);
  ordered_json per_n = ordered_json::array();
  std::vector<double> last_errors(c.grid.size(), 0.0);
  for (std::size_t k = 0; k < c.N_grid.size(); ++k) {
    const auto n = c.N_grid[k];
    const double nn = static_cast<double>(n);
    auto sim = harness::base_sim(c, n, harness::seed_for(c, k));
    sim.warmup = 0.0;
    sim.initial_counts.assign(d, 0);
    std::vector<double> rho0(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double r = c.rho0.empty() ? c.env.mean() / c.mu[i] : c.rho0[i];
      sim.initial_counts[i] = std::llround(nn * r);
      rho0[i] = static_cast<double>(sim.initial_counts[i]) / nn;
    }
    const auto traj = simulate(sim);
    ordered_json times = ordered_json::array();
    for (std::size_t g = 0; g < c.grid.size(); ++g) {
      const double t = c.grid[g];
      std::vector<double> center(d);
      for (std::size_t i = 0; i < d; ++i) center[i] = fluid_limit(rho0[i], c.env, c.mu[i], t);
      const auto u = normalized_endpoint(traj, sim.scaling, center, t);
      const auto limit = fclt_covariance(c.env, queues, c.delta, c.alpha, rho0, t).matrix;
      std::vector<std::vector<double>> cols(d);
      for (std::size_t i = 0; i < d; ++i) cols[i] = harness::column(u, i);
      Matrix emp(d);
      double max_rel = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t m = 0; m < d; ++m) {
          emp(i, m) = sample_covariance(cols[i], cols[m]);
          if (limit(i, m) != 0.0) max_rel = std::max(max_rel, std::abs(emp(i, m) / limit(i, m) - 1.0));
        }
      times.push_back({{"t", t},
                       {"empirical", to_json_value(emp)},
                       {"limit", to_json_value(limit)},
                       {"max_relative_error", max_rel}});
      last_errors[g] = max_rel;
    }
    per_n.push_back({{"N", n}, {"rho0", rho0}, {"times", times}});
  }
  for (std::size_t g = 0; g < c.grid.size(); ++g)
    if (c.grid[g] > 0.0)
      out.criteria.push_back(harness::within("covariance_max_rel_error[t=" + format_number(c.grid[g]) + "]",
                                             last_errors[g], 0.0, c.tolerances.covariance_rel));
  ordered_json results;
  results["regime"] = to_string(regime_of(c.alpha));
  results["per_N"] = per_n;
  harness::finish(out, c, std::move(results));
  return out;
}

/// Stationary correlations of every queue pair against the limit, per N.
inline RunResult run_corr_check(const ExperimentConfig& c) {
  RunResult out;
  const std::size_t d = c.mu.size();
  ordered_json per_n = ordered_json::array();
  std::vector<double> last;
  std::vector<double> targets;
  for (std::size_t k = 0; k < c.N_grid.size(); ++k) {
    const auto n = c.N_grid[k];
    auto sim = harness::base_sim(c, n, harness::seed_for(c, k));
    const auto traj = sample_stationary(sim);
    std::vector<std::vector<double>> cols(d, std::vector<double>(static_cast<std::size_t>(traj.replications)));
    for (std::int64_t r = 0; r < traj.replications; ++r)
      for (std::size_t i = 0; i < d; ++i) cols[i][static_cast<std::size_t>(r)] = static_cast<double>(traj.count(r, 0, i));
    ordered_json pairs = ordered_json::array();
    last.clear();
    targets.clear();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t m = i + 1; m < d; ++m) {
        const double cov = sample_covariance(cols[i], cols[m]);
        const double vi = sample_covariance(cols[i], cols[i]);
        const double vm = sample_covariance(cols[m], cols[m]);
        const double corr = cov / std::sqrt(vi * vm);
        // Large-sample standard error of a correlation coefficient.
        const double se = (1.0 - corr * corr) / std::sqrt(static_cast<double>(traj.replications));
        const auto lim = stationary_correlation(c.env, c.mu[i], c.mu[m], c.delta, c.alpha);
        pairs.push_back({{"i", i},
                         {"k", m},
                         {"corr", harness::with_se(corr, se)},
                         {"limit", lim.corr},
                         {"c", lim.c_const}});
        last.push_back(corr);
        targets.push_back(lim.corr);
      }
    per_n.push_back({{"N", n}, {"pairs", pairs}});
  }
  std::size_t p = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t m = i + 1; m < d; ++m, ++p)
      out.criteria.push_back(harness::within("correlation[" + std::to_string(i) + "," + std::to_string(m) + "]",
                                             last[p], targets[p], c.tolerances.correlation_rel * targets[p]));
  ordered_json results;
  results["regime"] = to_string(regime_of(c.alpha));
  results["per_N"] = per_n;
  harness::finish(out, c, std::move(results));
  return out;
}

/// Importance-sampling estimates of P(M(t) >= N a) per N and the weighted
/// slope of log P against the regime's speed, compared with the decay rate.
inline RunResult run_ldp_check(const ExperimentConfig& c) {
  RunResult out;
  RateQuery q{c.env, c.mu, c.delta, c.alpha, c.t(), c.a};
  const auto regime = classify_regime(q);
  const auto rate = decay_rate(q);
  const auto& tol = c.tolerances;
  ordered_json per_n = ordered_json::array();
  std::vector<double> speeds, logs, errs;
  double worst_rel_err = 0.0;
  for (std::size_t k = 0; k < c.N_grid.size(); ++k) {
    const auto n = c.N_grid[k];
    const ScalingRegime scaling(n, c.alpha, c.delta);
    RandomStream rng(harness::seed_for(c, k));
    const auto est =
        regime == LdRegime::SlowUnbounded
            ? is_estimate_tail(q, scaling, c.replications, rng,
                               c.ldp_target == "proxy" ? TailTarget::Proxy : TailTarget::Queue, c.threads)
            : is_estimate_poisson_tail(q, scaling, c.replications, rng, c.resolution, c.threads);
    const double s = rate.speed.at(static_cast<double>(n));
    speeds.push_back(s);
    logs.push_back(est.log_prob);
    errs.push_back(est.rel_err);
    worst_rel_err = std::max(worst_rel_err, est.rel_err);
    if (est.rel_err > tol.is_rel_err_warn)
      out.warnings.push_back("relative error " + format_number(est.rel_err) + " at N = " + std::to_string(n));
    auto entry = to_json_value(est);
    entry["N"] = n;
    entry["speed"] = s;
    entry["normalized_log_prob"] = est.log_prob / s;
    per_n.push_back(entry);
  }
  ordered_json results;
  results["regime"] = to_string(regime);
  results["rate"] = to_json_value(rate);
  results["per_N"] = per_n;
  out.rates = ordered_json::array({to_json_value(rate)});
  try {
    const auto fit = estimate_decay_slope(speeds, logs, errs);
    results["slope"] = {{"value", fit.slope},
                        {"se", fit.slope_se},
                        {"intercept", fit.intercept},
                        {"uncorrected", fit.uncorrected_slope}};
    out.criteria.push_back(harness::within("slope_vs_rate", fit.slope, rate.rate, tol.slope_rel * std::abs(rate.rate)));
  } catch (const InsufficientData& e) {
    out.warnings.push_back(std::string("slope fit failed: ") + e.what());
    out.criteria.push_back({"slope_vs_rate", std::nan(""), rate.rate, tol.slope_rel * std::abs(rate.rate), false});
  }
  out.criteria.push_back({"is_rel_err_max", worst_rel_err, 0.0, tol.is_rel_err_max, worst_rel_err < tol.is_rel_err_max});
  if (regime == LdRegime::SlowUnbounded) {
    const double th = rate.theta_star[0];
    const double direct = integrated_log_mgf_quad(c.env, c.mu[0], c.t(), th).value;
    const double subst = integrated_log_mgf_substituted(c.env, c.mu[0], c.t(), th).value;
    // Central difference of the quadrature at theta*.
    const double h = 1e-4 * std::max(1.0, th);
    auto value = [&](double x) { return integrated_log_mgf_quad(c.env, c.mu[0], c.t(), x, 1e-13).value; };
    const double slope = (value(th + h) - value(th - h)) / (2.0 * h);
    const double residual = std::abs(c.a[0] - slope);
    results["legendre"] = {{"theta_star", th},
                           {"direct", direct},
                           {"substituted", subst},
                           {"stationarity_residual", residual}};
    out.criteria.push_back({"stationarity_residual", residual, 0.0, tol.stationarity_max, residual < tol.stationarity_max});
    out.criteria.push_back(harness::within("dual_route_quadrature", direct, subst, tol.dual_route_abs));
  }
  harness::finish(out, c, std::move(results));
  return out;
}

inline RunResult run_experiment(const ExperimentConfig& c) {
  if (c.kind == "analytic") return run_analytic(c);
  if (c.kind == "simulate") return run_simulate(c);
  if (c.kind == "clt-check") return run_clt_check(c);
  if (c.kind == "fclt-check") return run_fclt_check(c);
  if (c.kind == "ldp-check") return run_ldp_check(c);
  if (c.kind == "corr-check") return run_corr_check(c);
  throw ConfigError("unknown experiment kind '" + c.kind + "'");
}

/// Writes report.json and, when present, trajectories.csv, moments.json and
/// rates.json into dir.
inline void write_outputs(const RunResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + (dir / name).string());
    os << text;
  };
  write("report.json", result.report.dump(2) + "\n");
  if (result.moments) write("moments.json", to_json_value(*result.moments).dump(2) + "\n");
  if (result.rates) write("rates.json", result.rates->dump(2) + "\n");
  if (result.trajectory) {
    std::ostringstream os;
    write_trajectory_csv(os, *result.trajectory);
    write("trajectories.csv", os.str());
  }
}

inline int exit_code(const RunResult& result) { return result.all_pass() ? 0 : 1; }

}  // namespace coxq
