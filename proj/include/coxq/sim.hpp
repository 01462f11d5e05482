#pragma once

// Monte Carlo of d infinite-server queues that share one resampled
// mixed-Poisson arrival stream.
//
// Construction: time is cut into cells on which the arrival rate is constant.
// An arrival at position s in a cell survives queue i up to the next readout
// with probability e^{-mu_i (G - s)}, so the arrivals of a cell that are still
// present, at the next readout, in exactly the queues of a pattern S form
// independent Poisson counts. Between readouts the counts are thinned by
// Binomial(M_i, e^{-mu_i dt}). Given the cell rates this is the exact joint
// law at the readout times.
//
// When slots are much shorter than the distance to the next readout, runs of
// consecutive slots are merged into one cell carrying their average level
// (CellResolution); exact_slots turns this off.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "coxq/analytic.hpp"
#include "coxq/env.hpp"
#include "coxq/errors.hpp"
#include "coxq/matrix.hpp"
#include "coxq/parallel.hpp"
#include "coxq/random.hpp"
#include "coxq/stats.hpp"

namespace coxq {

inline constexpr std::size_t kMaxQueues = 8;

/// Warm-up horizon in units of 1 / min mu: residual bias below e^{-40}.
inline constexpr double kWarmupMultiple = 40.0;

/// Controls how far slots may be merged into cells.
struct CellResolution {
  bool exact_slots = false;
  /// A cell may span at most this fraction of its distance to the next readout.
  double relative = 0.01;
  /// Cells shorter than this (in units of 1 / max mu) are never split further.
  double min_scaled_length = 1e-3;
};

struct SimConfig {
  EnvSpec env;
  QueueParams queues;
  ScalingRegime scaling;
  double horizon = 1.0;
  std::vector<double> grid;
  std::vector<std::int64_t> initial_counts;  ///< empty means all zero
  double warmup = 0.0;
  std::uint64_t seed = 0;
  std::int64_t replications = 1;
  bool record_paths = false;
  CellResolution resolution;
  double event_budget = 1e9;
  unsigned threads = 0;

  void validate() const {
    queues.validate();
    scaling.validate();
    if (queues.d() > kMaxQueues)
      throw DomainError("at most " + std::to_string(kMaxQueues) + " queues are supported");
    if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw DomainError("horizon must be finite and >= 0");
    if (grid.empty()) throw DomainError("the readout grid must not be empty");
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (!(grid[g] >= 0.0 && grid[g] <= horizon)) throw DomainError("grid times must lie in [0, horizon]");
      if (g > 0 && grid[g] < grid[g - 1]) throw DomainError("grid times must be sorted");
    }
    if (!initial_counts.empty()) {
      if (initial_counts.size() != queues.d())
        throw DomainError("initial_counts must have one entry per queue");
      for (auto c : initial_counts)
        if (c < 0) throw DomainError("initial counts must be >= 0");
    }
    if (!(warmup >= 0.0) || !std::isfinite(warmup)) throw DomainError("warmup must be finite and >= 0");
    if (replications < 1) throw DomainError("replications must be >= 1");
    if (record_paths && !resolution.exact_slots)
      throw DomainError("record_paths requires resolution.exact_slots");
    if (!(resolution.relative > 0.0) || !(resolution.min_scaled_length > 0.0))
      throw DomainError("cell resolution parameters must be > 0");
  }

  /// N E Lambda (warmup + last readout) replications.
  double expected_events() const {
    return static_cast<double>(scaling.N) * env.mean() * (warmup + grid.back()) *
           static_cast<double>(replications);
  }
};

/// Queue counts at the readout grid for every replication.
struct Trajectory {
  std::vector<double> grid;
  std::size_t d = 0;
  std::int64_t replications = 0;
  std::vector<std::int64_t> counts;      ///< [replication][grid][queue], row-major
  std::vector<RatePath> realized_paths;  ///< one per replication when recorded

  std::int64_t count(std::int64_t rep, std::size_t g, std::size_t i) const {
    return counts[(static_cast<std::size_t>(rep) * grid.size() + g) * d + i];
  }

  std::size_t grid_index(double t) const {
    for (std::size_t g = 0; g < grid.size(); ++g)
      if (grid[g] == t) return g;
    throw RangeError("time " + std::to_string(t) + " is not on the readout grid");
  }
};

namespace detail {

/// Number of whole slots merged into a cell that starts `distance` away from
/// the next readout.
inline std::int64_t cell_slots(double distance, double slot, double mu_max, const CellResolution& res) {
  if (res.exact_slots) return 1;
  const double len = std::max(res.min_scaled_length / mu_max, res.relative * distance);
  const double k = std::floor(len / slot);
  if (!(k >= 1.0)) return 1;
  return static_cast<std::int64_t>(std::min(k, 1e15));
}

/// integral over [tau, tau + len] of e^{-m s} ds.
inline double decay_integral(double m, double tau, double len) {
  return std::exp(-m * tau) * -std::expm1(-m * len) / m;
}

/// Poisson splitting of a constant-rate cell into survival patterns.
class PatternKernel {
 public:
  explicit PatternKernel(const std::vector<double>& mu) : d_(mu.size()), sums_(std::size_t{1} << d_) {
    for (std::size_t s = 1; s < sums_.size(); ++s)
      for (std::size_t i = 0; i < d_; ++i)
        if (s & (std::size_t{1} << i)) sums_[s] += mu[i];
    weights_.resize(sums_.size());
  }

  /// Adds to fresh[i] the arrivals of a cell [G - tau - len, G - tau) with
  /// rate `rate` that are still in queue i at the readout time G.
  void add(double rate, double tau, double len, RandomStream& rng, std::vector<std::int64_t>& fresh) {
    if (!(rate > 0.0) || !(len > 0.0)) return;
    const std::size_t full = sums_.size();
    for (std::size_t s = 1; s < full; ++s) weights_[s] = decay_integral(sums_[s], tau, len);
    // Superset Moebius transform: P(survive exactly S) from P(survive all of T).
    for (std::size_t i = 0; i < d_; ++i) {
      const std::size_t bit = std::size_t{1} << i;
      for (std::size_t s = 1; s < full; ++s)
        if (!(s & bit)) weights_[s] -= weights_[s | bit];
    }
    for (std::size_t s = 1; s < full; ++s) {
      const double mean = rate * weights_[s];
      if (!(mean > 0.0)) continue;
      const std::int64_t c = rng.poisson(mean);
      if (c == 0) continue;
      for (std::size_t i = 0; i < d_; ++i)
        if (s & (std::size_t{1} << i)) fresh[i] += c;
    }
  }

 private:
  std::size_t d_;
  std::vector<double> sums_;
  std::vector<double> weights_;
};

inline void check_budget(const SimConfig& config) {
  const double events = config.expected_events();
  if (events > config.event_budget)
    throw ResourceError("expected " + std::to_string(events) + " arrival events exceed the budget of " +
                        std::to_string(config.event_budget));
}

inline void simulate_replication(const SimConfig& config, std::int64_t rep, std::int64_t* out,
                                 RatePath* path) {
  const auto& mu = config.queues.mu;
  const std::size_t d = mu.size();
  const std::size_t n_obs = config.grid.size();
  const double slot = config.scaling.slot_length();
  const double n_scale = static_cast<double>(config.scaling.N);
  const double mu_max = *std::max_element(mu.begin(), mu.end());
  RandomStream rng = RandomStream::derive(config.seed, static_cast<std::uint64_t>(rep));
  PatternKernel kernel(mu);

  std::vector<double> obs(n_obs);
  for (std::size_t g = 0; g < n_obs; ++g) obs[g] = config.warmup + config.grid[g];

  std::vector<std::int64_t> m(d, 0), fresh(d, 0);
  if (!config.initial_counts.empty()) m = config.initial_counts;
  double last = 0.0;
  std::size_t g = 0;
  auto readout = [&] {
    for (std::size_t i = 0; i < d; ++i) {
      m[i] = rng.binomial(m[i], std::exp(-mu[i] * (obs[g] - last))) + fresh[i];
      fresh[i] = 0;
      out[g * d + i] = m[i];
    }
    last = obs[g];
    ++g;
  };

  if (path) {
    path->slot_length = slot;
    path->horizon = obs.back();
    path->rates.clear();
  }

  std::int64_t j = 0;
  while (true) {
    const double a = static_cast<double>(j) * slot;
    while (g < n_obs && obs[g] <= a) readout();
    if (g == n_obs) break;
    std::int64_t k = cell_slots(obs[g] - a, slot, mu_max, config.resolution);
    if (k > 1) {
      const auto fit = static_cast<std::int64_t>(std::floor((obs[g] - a) / slot));
      k = std::max<std::int64_t>(1, std::min(k, fit));
    }
    const double level = k == 1 ? sample(config.env, rng)
                                : sample_sum(config.env, k, rng) / static_cast<double>(k);
    if (path) path->rates.push_back(level);
    const double rate = n_scale * level;
    const double b = static_cast<double>(j + k) * slot;
    double s = a;
    while (s < b && g < n_obs) {
      const double e = std::min(b, obs[g]);
      if (e > s) kernel.add(rate, obs[g] - e, e - s, rng, fresh);
      if (obs[g] < b) {
        readout();
        s = e;
      } else {
        s = b;
      }
    }
    j += k;
  }
}

/// Visits the cells of [0, window) measured backwards from a readout: an
/// optional partial slot of length first_piece adjacent to the readout, then
/// whole slots (merged per the resolution). fn(k, tau, len) receives the
/// number of slots in the cell, its distance to the readout and its length.
template <class Fn>
void for_each_backward_cell(double window, double slot, double first_piece, double mu_max,
                            const CellResolution& res, Fn&& fn) {
  double s = 0.0;
  if (first_piece > 0.0 && window > 0.0) {
    fn(std::int64_t{1}, 0.0, std::min(first_piece, window));
    s = first_piece;
  }
  std::int64_t m = 0;
  while (s < window) {
    std::int64_t k = cell_slots(s, slot, mu_max, res);
    if (k > 1) {
      const auto fit = static_cast<std::int64_t>(std::floor((window - s) / slot));
      k = std::max<std::int64_t>(1, std::min(k, fit));
    }
    const double len = std::min(static_cast<double>(k) * slot, window - s);
    fn(k, s, len);
    m += k;
    s = first_piece + static_cast<double>(m) * slot;
  }
}

}  // namespace detail

/// Runs config.replications independent replications. Replication r uses the
/// stream RandomStream::derive(seed, r), so results do not depend on threads.
inline Trajectory simulate(const SimConfig& config) {
  config.validate();
  detail::check_budget(config);
  Trajectory traj;
  traj.grid = config.grid;
  traj.d = config.queues.d();
  traj.replications = config.replications;
  const std::size_t stride = traj.grid.size() * traj.d;
  traj.counts.assign(static_cast<std::size_t>(config.replications) * stride, 0);
  if (config.record_paths) traj.realized_paths.resize(static_cast<std::size_t>(config.replications));
  parallel_for(static_cast<std::size_t>(config.replications), config.threads, [&](std::size_t r) {
    detail::simulate_replication(config, static_cast<std::int64_t>(r), traj.counts.data() + r * stride,
                                 config.record_paths ? &traj.realized_paths[r] : nullptr);
  });
  return traj;
}

/// kappa = integral of the rate path against e^{-mu s}, looking back `window`
/// from a readout at time t after a start at time 0 (slots anchored at 0).
/// window = +inf gives the stationary parameter: cells are drawn up to
/// 40 / mu and the rest is replaced by its mean.
inline double sample_kappa(const EnvSpec& env, double mu, double t, const ScalingRegime& scaling,
                           RandomStream& rng, const CellResolution& res = {}) {
  detail::require_positive(mu, "mu");
  scaling.validate();
  const double slot = scaling.slot_length();
  const bool stationary = std::isinf(t);
  if (!stationary && !(t >= 0.0)) throw DomainError("t must be >= 0");
  const double window = stationary ? kWarmupMultiple / mu : t;
  double first = 0.0;
  if (!stationary) {
    const double n = std::floor(t / slot);
    first = std::max(0.0, t - n * slot);
    if (first >= slot) first = 0.0;
  }
  double kappa = 0.0;
  double reach = 0.0;
  detail::for_each_backward_cell(window, slot, first, mu, res, [&](std::int64_t k, double tau, double len) {
    const double level = k == 1 ? sample(env, rng) : sample_sum(env, k, rng) / static_cast<double>(k);
    kappa += level * detail::decay_integral(mu, tau, len);
    reach = tau + len;
  });
  if (stationary) kappa += env.mean() * std::exp(-mu * reach) / mu;
  return kappa;
}

/// Stationary queue vectors at a single readout (grid {0}). d = 1 draws
/// Poisson(N kappa) directly; d >= 2 simulates from empty over a warm-up of
/// 40 / min mu.
inline Trajectory sample_stationary(const SimConfig& config) {
  SimConfig c = config;
  c.grid = {0.0};
  c.horizon = 0.0;
  c.initial_counts.clear();
  c.record_paths = false;
  c.warmup = kWarmupMultiple / *std::min_element(config.queues.mu.begin(), config.queues.mu.end());
  c.validate();
  detail::check_budget(c);
  if (c.queues.d() >= 2) return simulate(c);
  Trajectory traj;
  traj.grid = c.grid;
  traj.d = 1;
  traj.replications = c.replications;
  traj.counts.assign(static_cast<std::size_t>(c.replications), 0);
  const double n_scale = static_cast<double>(c.scaling.N);
  parallel_for(static_cast<std::size_t>(c.replications), c.threads, [&](std::size_t r) {
    RandomStream rng = RandomStream::derive(c.seed, r);
    const double kappa = sample_kappa(c.env, c.queues.mu[0], kInf, c.scaling, rng, c.resolution);
    traj.counts[r] = rng.poisson(n_scale * kappa);
  });
  return traj;
}

struct QueueMoments {
  double mean = 0.0;
  double variance = 0.0;
  double mean_se = 0.0;
  double variance_se = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;
};

struct GridMoments {
  double time = 0.0;
  std::vector<QueueMoments> queues;
  Matrix covariance;
};

struct MomentReport {
  std::int64_t replications = 0;
  std::vector<GridMoments> grid;
};

inline MomentReport estimate_moments(const Trajectory& traj) {
  if (traj.replications < 2) throw InsufficientData("moment estimation needs at least two replications");
  MomentReport report;
  report.replications = traj.replications;
  const auto n = static_cast<std::size_t>(traj.replications);
  std::vector<std::vector<double>> cols(traj.d, std::vector<double>(n));
  for (std::size_t g = 0; g < traj.grid.size(); ++g) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < traj.d; ++i)
        cols[i][r] = static_cast<double>(traj.count(static_cast<std::int64_t>(r), g, i));
    GridMoments gm;
    gm.time = traj.grid[g];
    gm.covariance = Matrix(traj.d);
    for (std::size_t i = 0; i < traj.d; ++i) {
      const auto s = summarize(cols[i]);
      gm.queues.push_back({s.mean, s.variance, s.mean_se, s.variance_se, s.m3, s.m4});
      gm.covariance(i, i) = s.variance;
      for (std::size_t k = 0; k < i; ++k) {
        const double c = sample_covariance(cols[i], cols[k]);
        gm.covariance(i, k) = c;
        gm.covariance(k, i) = c;
      }
    }
    report.grid.push_back(std::move(gm));
  }
  return report;
}

/// N^{beta/2} (counts / N - center), one row of d values per replication.
inline std::vector<std::vector<double>> normalized_endpoint(const Trajectory& traj,
                                                            const ScalingRegime& scaling,
                                                            std::span<const double> center, double t) {
  scaling.validate();
  if (center.size() != traj.d) throw DomainError("center must have one entry per queue");
  const std::size_t g = traj.grid_index(t);
  const double n = static_cast<double>(scaling.N);
  const double factor = std::pow(n, 0.5 * scaling.beta());
  std::vector<std::vector<double>> out(static_cast<std::size_t>(traj.replications),
                                       std::vector<double>(traj.d));
  for (std::int64_t r = 0; r < traj.replications; ++r)
    for (std::size_t i = 0; i < traj.d; ++i)
      out[static_cast<std::size_t>(r)][i] =
          factor * (static_cast<double>(traj.count(r, g, i)) / n - center[i]);
  return out;
}

/// Shortest round-trip decimal representation.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// CSV with header replication,time,queue,count; queues are 0-based.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "replication,time,queue,count\n";
  for (std::int64_t r = 0; r < traj.replications; ++r)
    for (std::size_t g = 0; g < traj.grid.size(); ++g)
      for (std::size_t i = 0; i < traj.d; ++i)
        os << r << ',' << format_number(traj.grid[g]) << ',' << i << ',' << traj.count(r, g, i) << '\n';
}

}  // namespace coxq
