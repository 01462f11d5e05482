// Acceptance run: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "coxq/coxq.hpp"

using namespace coxq;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok " : "BAD ") + what);
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Pinned tolerances.
constexpr double kSeMultiple = 3.0;
constexpr double kPgfAbs = 1e-10;
constexpr double kTrichotomyRel = 0.02;
constexpr double kVarianceRel = 0.10;
constexpr double kAdPMin = 0.01;
constexpr double kCovarianceRel = 0.10;
constexpr double kCorrelationRel = 0.10;
constexpr double kSlopeRel = 0.10;
constexpr double kIsRelErr = 0.10;
constexpr double kStationarity = 1e-6;
constexpr double kDualRoute = 1e-9;
constexpr double kReduction = 1e-8;

Tolerances pinned() {
  Tolerances t;
  t.se_multiple = kSeMultiple;
  t.variance_rel = kVarianceRel;
  t.ad_p_min = kAdPMin;
  t.covariance_rel = kCovarianceRel;
  t.correlation_rel = kCorrelationRel;
  t.slope_rel = kSlopeRel;
  t.is_rel_err_max = kIsRelErr;
  t.trichotomy_rel = kTrichotomyRel;
  t.pgf_abs = kPgfAbs;
  t.stationarity_max = kStationarity;
  t.dual_route_abs = kDualRoute;
  return t;
}

ExperimentConfig config(json j, std::uint64_t seed) {
  j["seed"] = seed;
  auto c = parse_config(j);
  c.tolerances = pinned();
  return c;
}

const json kExp1 = {{"family", "exponential"}, {"rate", 1.0}};
const json kDet1 = {{"family", "deterministic"}, {"lambda", 1.0}};

double dilog(double x) {
  double s = 0.0, p = x;
  for (int k = 1; k < 5000 && std::abs(p) > 1e-18; ++k, p *= x) s += p / (static_cast<double>(k) * k);
  return s;
}

// Slow-regime rate for an Exp(1) law and mu = 1: sup_theta theta a - Li2(theta) + Li2(theta e^{-t}).
double exp_slow_rate_oracle(double t, double a) {
  const double q = std::exp(-t);
  auto deriv = [&](double th) { return (-std::log1p(-th) + std::log1p(-th * q)) / th; };
  double lo = 1e-12, hi = 1.0 - 1e-15;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (deriv(mid) < a ? lo : hi) = mid;
  }
  const double th = 0.5 * (lo + hi);
  return -(th * a - dilog(th) + dilog(th * q));
}

Outcome c1() {
  Outcome o;
  auto c = config({{"kind", "simulate"},
                   {"env", kDet1},
                   {"mu", 1.0},
                   {"alpha", 2.0},
                   {"N", 100},
                   {"grid", {0.0}},
                   {"warmup", 40.0},
                   {"replications", 10000}},
                  101);
  const auto r = run_experiment(c);
  std::vector<double> x;
  for (std::int64_t i = 0; i < r.trajectory->replications; ++i)
    x.push_back(static_cast<double>(r.trajectory->count(i, 0, 0)));
  const auto s = summarize(x);
  const double ratio = s.variance / s.mean;
  const double se = s.dispersion_ratio_se();
  o.check(std::abs(ratio - 1.0) <= kSeMultiple * se,
          "variance/mean " + fmt(ratio) + " vs 1 (3 SE = " + fmt(kSeMultiple * se) + ")");
  double worst = 0.0;
  for (double z : {0.0, 0.25, 0.5, 0.75, 1.0})
    worst = std::max(worst, std::abs(stationary_pgf(EnvSpec::deterministic(1.0), 1.0, 1.0, z).value -
                                     std::exp(z - 1.0)));
  o.check(worst <= kPgfAbs, "pgf vs exp(z-1) max error " + fmt(worst));
  return o;
}

Outcome c2() {
  Outcome o;
  // Oracle: E Lambda / mu + Var Lambda sum_j (int over slot j of e^{-s} ds)^2 at a slot boundary.
  double oracle = 1.0;
  for (int j = 0; j < 200; ++j) oracle += std::pow(std::exp(-j) - std::exp(-(j + 1.0)), 2);
  o.check(std::abs(oracle - 1.462117) < 1e-6, "variance oracle " + fmt(oracle));
  auto c = config({{"kind", "simulate"},
                   {"env", kExp1},
                   {"mu", 1.0},
                   {"delta", 1.0},
                   {"alpha", 1.0},
                   {"N", 1},
                   {"grid", {0.0}},
                   {"stationary", true},
                   {"write_trajectories", true},
                   {"replications", 1000000}},
                  102);
  const auto r = run_experiment(c);
  std::vector<double> x;
  for (std::int64_t i = 0; i < r.trajectory->replications; ++i)
    x.push_back(static_cast<double>(r.trajectory->count(i, 0, 0)));
  const auto s = summarize(x);
  o.check(std::abs(s.variance - oracle) <= kSeMultiple * s.variance_se,
          "variance " + fmt(s.variance) + " vs " + fmt(oracle) + " (3 SE = " + fmt(kSeMultiple * s.variance_se) + ")");
  return o;
}

Outcome c3() {
  Outcome o;
  for (double alpha : {0.5, 1.0, 2.0}) {
    std::vector<double> gaps;
    for (std::int64_t n : {100, 1000, 10000}) {
      const auto v = scaled_variance(EnvSpec::exponential(1.0), 1.0, ScalingRegime(n, alpha, 1.0));
      gaps.push_back(std::abs(v.exact / v.asymptotic - 1.0));
    }
    const bool monotone = gaps[1] <= gaps[0] && gaps[2] <= gaps[1];
    o.check(monotone && gaps[2] <= kTrichotomyRel,
            "alpha " + fmt(alpha) + ": |ratio - 1| = " + fmt(gaps[0]) + ", " + fmt(gaps[1]) + ", " + fmt(gaps[2]));
  }
  return o;
}

Outcome c4() {
  Outcome o;
  for (double alpha : {0.5, 1.0, 2.0}) {
    auto c = config({{"kind", "clt-check"},
                     {"env", kExp1},
                     {"mu", 1.0},
                     {"delta", 2.0},
                     {"alpha", alpha},
                     {"N_grid", {2000}},
                     {"replications", 10000}},
                    104);
    const auto r = run_experiment(c);
    const auto& last = r.report["results"]["per_N"].back();
    const double ratio = last["ratio"]["value"].get<double>();
    const double p = last["anderson_darling"]["p_value"].get<double>();
    o.check(std::abs(ratio - 1.0) <= kVarianceRel, "alpha " + fmt(alpha) + ": variance/sigma2 " + fmt(ratio));
    o.check(p > kAdPMin, "alpha " + fmt(alpha) + ": Anderson-Darling p " + fmt(p) + ", skewness " +
                             fmt(last["skewness"].get<double>()));
  }
  return o;
}

Outcome c5() {
  Outcome o;
  for (double alpha : {0.5, 2.0}) {
    auto c = config({{"kind", "fclt-check"},
                     {"env", kExp1},
                     {"mu", {1.0, 2.0}},
                     {"delta", 1.0},
                     {"alpha", alpha},
                     {"N_grid", {2000}},
                     {"grid", {0.0, 1.0}},
                     {"replications", 10000}},
                    105);
    const auto r = run_experiment(c);
    const auto& at1 = r.report["results"]["per_N"].back()["times"].back();
    const double err = at1["max_relative_error"].get<double>();
    o.check(err <= kCovarianceRel, "alpha " + fmt(alpha) + ": max relative covariance error " + fmt(err));
  }
  return o;
}

Outcome c6() {
  Outcome o;
  const double mu1 = 1.0, mu2 = 2.0;
  const double fast = std::sqrt(mu1 * mu2) / (mu1 + mu2);
  for (double alpha : {2.0, 0.5}) {
    const double oracle = alpha > 1.0 ? fast : 2.0 * fast;
    auto c = config({{"kind", "corr-check"},
                     {"env", kExp1},
                     {"mu", {mu1, mu2}},
                     {"delta", 1.0},
                     {"alpha", alpha},
                     {"N_grid", {2000}},
                     {"replications", 10000}},
                    106);
    const auto r = run_experiment(c);
    const double corr = r.report["results"]["per_N"].back()["pairs"][0]["corr"]["value"].get<double>();
    o.check(std::abs(corr - oracle) <= kCorrelationRel * oracle,
            "alpha " + fmt(alpha) + ": corr " + fmt(corr) + " vs " + fmt(oracle));
  }
  return o;
}

Outcome c7() {
  Outcome o;
  const double rho = 1.0 - std::exp(-40.0), a = 2.0;
  const double oracle = a * std::log(rho / a) - rho + a;
  auto c = config({{"kind", "ldp-check"},
                   {"env", kDet1},
                   {"mu", 1.0},
                   {"delta", 1.0},
                   {"alpha", 2.0},
                   {"t", 40.0},
                   {"a", a},
                   {"N_grid", {50, 100, 200, 400}},
                   {"replications", 20000}},
                  107);
  const auto r = run_experiment(c);
  const auto& res = r.report["results"];
  for (const auto& e : res["per_N"])
    o.check(e["rel_err"].get<double>() < kIsRelErr,
            "N " + std::to_string(e["N"].get<int>()) + ": rel_err " + fmt(e["rel_err"].get<double>()));
  const double slope = res["slope"]["value"].get<double>();
  o.check(std::abs(slope - oracle) <= kSlopeRel * std::abs(oracle),
          "slope " + fmt(slope) + " vs " + fmt(oracle) + " (uncorrected " + fmt(res["slope"]["uncorrected"].get<double>()) + ")");
  return o;
}

Outcome c8() {
  Outcome o;
  const double t = 5.0, a = 1.5;
  const double oracle = exp_slow_rate_oracle(t, a);
  const auto rate = rate_slow(RateQuery{EnvSpec::exponential(1.0), {1.0}, 1.0, 0.5, t, {a}});
  o.check(std::abs(rate.rate - oracle) < 1e-8, "rate_slow " + fmt(rate.rate) + " vs dilogarithm " + fmt(oracle));
  auto c = config({{"kind", "ldp-check"},
                   {"env", kExp1},
                   {"mu", 1.0},
                   {"delta", 1.0},
                   {"alpha", 0.5},
                   {"t", t},
                   {"a", a},
                   {"N_grid", {200, 400, 800, 1600}},
                   {"replications", 20000}},
                  108);
  const auto r = run_experiment(c);
  const auto& res = r.report["results"];
  const double slope = res["slope"]["value"].get<double>();
  o.check(std::abs(slope - rate.rate) <= kSlopeRel * std::abs(rate.rate),
          "slope " + fmt(slope) + " vs " + fmt(rate.rate) + " (uncorrected " + fmt(res["slope"]["uncorrected"].get<double>()) + ")");
  const double resid = res["legendre"]["stationarity_residual"].get<double>();
  o.check(resid < kStationarity, "stationarity residual " + fmt(resid));
  const double gap = std::abs(res["legendre"]["direct"].get<double>() - res["legendre"]["substituted"].get<double>());
  o.check(gap <= kDualRoute, "dual-route gap " + fmt(gap));
  return o;
}

Outcome c9() {
  Outcome o;
  const auto det = EnvSpec::deterministic(1.0);
  const double t = 40.0;
  for (double a : {1.5, 2.0, 3.0}) {
    const double bounded = rate_slow_bounded(RateQuery{det, {1.0}, 1.0, 0.5, t, {a}}).rate;
    const double fast = rate_fast(fluid_level(det, 1.0, t), a).rate;
    o.check(bounded == fast, "a " + fmt(a) + ": bounded slow " + fmt(bounded) + " == fast " + fmt(fast));
  }
  for (double delta : {0.5, 1.0, 2.0}) {
    const double inter = rate_intermediate(RateQuery{det, {1.0}, delta, 1.0, t, {2.0}}).rate / delta;
    const double fast = rate_fast(fluid_level(det, 1.0, t), 2.0).rate;
    o.check(std::abs(inter - fast) < kReduction, "delta " + fmt(delta) + ": intermediate/delta " + fmt(inter) +
                                                     " vs fast " + fmt(fast));
  }
  for (double alpha : {0.5, 1.0, 2.0}) {
    const RateQuery q{EnvSpec::exponential(1.0), {1.0}, 1.0, alpha, 5.0, {1.5}};
    const double multi = rate_multivariate(q).rate, uni = decay_rate(q).rate;
    o.check(std::abs(multi - uni) < kReduction,
            "alpha " + fmt(alpha) + ": d = 1 joint " + fmt(multi) + " vs univariate " + fmt(uni));
  }
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome c10() {
  Outcome o;
  const json gamma = {{"family", "gamma"}, {"shape", 2.0}, {"scale", 0.5}};
  const std::vector<json> configs = {
      {{"kind", "analytic"}, {"env", kExp1}, {"mu", {1.0, 2.0}}, {"N_grid", {100, 1000}}, {"t", 1.0}, {"a", {1.5, 1.0}}},
      {{"kind", "simulate"}, {"env", gamma}, {"mu", {1.0, 2.0}}, {"alpha", 0.5}, {"N", 50},
       {"grid", {0.0, 0.5, 1.0}}, {"initial_counts", {10, 5}}, {"replications", 50}},
      {{"kind", "clt-check"}, {"env", kExp1}, {"delta", 2.0}, {"N_grid", {100, 400}}, {"replications", 300}},
      {{"kind", "fclt-check"}, {"env", kExp1}, {"mu", {1.0, 2.0}}, {"alpha", 2.0}, {"N_grid", {200}},
       {"grid", {0.0, 1.0}}, {"replications", 300}},
      {{"kind", "ldp-check"}, {"env", kExp1}, {"alpha", 0.5}, {"N_grid", {100, 200}}, {"t", 5.0}, {"a", 1.5},
       {"replications", 200}},
      {{"kind", "corr-check"}, {"env", kExp1}, {"mu", {1.0, 2.0}}, {"alpha", 0.5}, {"N_grid", {100}},
       {"replications", 200}}};
  const auto root = std::filesystem::temp_directory_path() / "coxq_acceptance_determinism";
  for (const auto& j : configs) {
    const auto kind = j["kind"].get<std::string>();
    const auto c = config(j, 7);
    write_outputs(run_experiment(c), root / kind / "1");
    write_outputs(run_experiment(c), root / kind / "2");
    bool same = true;
    int files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(root / kind / "1")) {
      ++files;
      same = same && slurp(entry.path()) == slurp(root / kind / "2" / entry.path().filename());
    }
    o.check(same && files > 0, kind + ": " + std::to_string(files) + " files identical");
  }
  std::filesystem::remove_all(root);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 Poisson degeneration", c1},  {"2 stationary variance", c2},      {"3 variance trichotomy", c3},
      {"4 central limit", c4},         {"5 functional covariance", c5},    {"6 correlation constant", c6},
      {"7 fast-regime decay", c7},     {"8 slow-regime decay", c8},        {"9 regime identities", c9},
      {"10 determinism", c10}};
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs);
    for (const auto& d : o.details) std::printf("       %s\n", d.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
