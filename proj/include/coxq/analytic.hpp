#pragma once

// Closed-form pre-limit and limit quantities for the infinite-server queue fed
// by the resampled mixed-Poisson stream.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "coxq/env.hpp"
#include "coxq/errors.hpp"
#include "coxq/matrix.hpp"

namespace coxq {

/// Service rates of the d queues that share one arrival stream.
struct QueueParams {
  std::vector<double> mu;

  QueueParams() = default;
  explicit QueueParams(std::vector<double> rates) : mu(std::move(rates)) { validate(); }

  std::size_t d() const { return mu.size(); }

  void validate() const {
    if (mu.empty()) throw DomainError("at least one service rate is required");
    for (double m : mu)
      if (!(m > 0.0) || !std::isfinite(m)) throw DomainError("service rates must be finite and > 0");
  }
};

/// Survival quantities of an exponential(mu) service over a window of length t.
struct SurvivalConstants {
  double p;        ///< e^{-mu t}: a job present at the window start survives it
  double q;        ///< (1 - e^{-mu t}) / (mu t): a uniform arrival in the window survives to its end
  double r;        ///< t q = (1 - e^{-mu t}) / mu
  double c_ratio;  ///< (1 - p) / (1 + p) = tanh(mu t / 2)

  double p_bar() const { return 1.0 - p; }

  static SurvivalConstants at(double mu, double t) {
    if (!(mu > 0.0)) throw DomainError("service rate must be > 0");
    if (!(t >= 0.0)) throw DomainError("window length must be >= 0");
    const double x = mu * t;
    const double pbar = -std::expm1(-x);
    return {std::exp(-x), x > 0.0 ? pbar / x : 1.0, pbar / mu, std::tanh(0.5 * x)};
  }
};

enum class Regime { Fast, Slow, Intermediate };

inline Regime regime_of(double alpha) {
  if (alpha > 1.0) return Regime::Fast;
  if (alpha < 1.0) return Regime::Slow;
  return Regime::Intermediate;
}

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::Fast: return "fast";
    case Regime::Slow: return "slow";
    case Regime::Intermediate: return "intermediate";
  }
  return "unknown";
}

/// Limiting covariance matrix of the centred, N^{beta/2}-scaled queue vector.
struct LimitCovariance {
  Matrix matrix;
  Regime regime;
};

namespace detail {

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError(std::string(what) + " must be finite and > 0");
}

inline double fast_indicator(double alpha) { return alpha >= 1.0 ? 1.0 : 0.0; }
inline double slow_indicator(double alpha) { return alpha <= 1.0 ? 1.0 : 0.0; }

}  // namespace detail

/// E M = E Lambda / mu.
inline double stationary_mean(const EnvSpec& env, double mu) {
  detail::require_positive(mu, "mu");
  return env.mean() / mu;
}

/// Var M = E Lambda / mu + C Var Lambda / mu^2 with C = (1 - p_Delta)/(1 + p_Delta).
inline double stationary_variance(const EnvSpec& env, double mu, double delta) {
  detail::require_positive(mu, "mu");
  detail::require_positive(delta, "delta");
  const auto sc = SurvivalConstants::at(mu, delta);
  return env.mean() / mu + sc.c_ratio * env.variance() / (mu * mu);
}

struct TransientMoments {
  double mean;
  double variance;
};

/// Mean and variance of M(t) for a system that starts empty at time 0.
/// M(t) is mixed Poisson with parameter kappa_t; the variance is
/// E kappa_t + Var kappa_t, where Var kappa_t collects the floor(t/Delta) full
/// slots (geometric in p_Delta^2) and the partial slot [n Delta, t).
inline TransientMoments transient_moments(const EnvSpec& env, double mu, double delta, double t) {
  detail::require_positive(mu, "mu");
  detail::require_positive(delta, "delta");
  if (!(t >= 0.0)) throw DomainError("t must be >= 0");
  if (t == 0.0) return {0.0, 0.0};
  auto n = std::floor(t / delta);
  if ((n + 1.0) * delta <= t) n += 1.0;
  if (n * delta > t) n -= 1.0;
  const double tail = t - n * delta;
  const auto sc = SurvivalConstants::at(mu, delta);
  const double mean = env.mean() * -std::expm1(-mu * t) / mu;
  double full = 0.0;
  if (n > 0.0)
    full = sc.r * sc.r * std::exp(-2.0 * mu * tail) * std::expm1(-2.0 * mu * delta * n) /
           std::expm1(-2.0 * mu * delta);
  const double partial_coeff = -std::expm1(-mu * tail) / mu;
  const double var_kappa = env.variance() * (full + partial_coeff * partial_coeff);
  return {mean, mean + var_kappa};
}

struct PgfResult {
  double value;       ///< truncated product
  double tail_bound;  ///< bound on the relative error of the truncation
  std::size_t terms;  ///< number of factors used
};

/// phi(z) = prod_{k>=0} g(1 - (1-z) p_Delta^k), g(w) = E exp(-Lambda r_Delta (1-w)).
/// Factors are accumulated in log space. The product stops once the bound
/// E Lambda (1-z) p^k / mu on the remaining log-factors (which also bounds
/// |log g_k|) falls below 1e-14.
inline PgfResult stationary_pgf(const EnvSpec& env, double mu, double delta, double z,
                                std::size_t k_max = 100'000'000) {
  detail::require_positive(mu, "mu");
  detail::require_positive(delta, "delta");
  if (!(z >= 0.0 && z <= 1.0)) throw DomainError("pgf argument must lie in [0, 1]");
  const auto sc = SurvivalConstants::at(mu, delta);
  const double scale = env.mean() * (1.0 - z) / mu;
  double log_phi = 0.0;
  double pk = 1.0;
  std::size_t k = 0;
  for (; k < k_max; ++k) {
    if (scale * pk < 1e-14) break;
    log_phi += log_mgf(env, -sc.r * (1.0 - z) * pk);
    pk *= sc.p;
  }
  const double bound = std::expm1(scale * pk);
  if (k == k_max && bound > 1e-9)
    throw ConvergenceError("stationary_pgf: k_max reached with tail bound " + std::to_string(bound));
  return {std::exp(log_phi), bound, k};
}

struct ScaledVariance {
  double exact;
  double asymptotic;
};

/// Var M^(N) at finite N and its leading-order trichotomy branch.
inline ScaledVariance scaled_variance(const EnvSpec& env, double mu, const ScalingRegime& scaling) {
  detail::require_positive(mu, "mu");
  scaling.validate();
  const double n = static_cast<double>(scaling.N);
  const double c = std::tanh(0.5 * mu * scaling.slot_length());
  const double exact = n * env.mean() / mu + n * n * c * env.variance() / (mu * mu);
  const double poisson_part = n * env.mean() / mu;
  const double env_part =
      std::pow(n, 2.0 - scaling.alpha) * scaling.delta * env.variance() / (2.0 * mu);
  double asymptotic = 0.0;
  switch (regime_of(scaling.alpha)) {
    case Regime::Fast: asymptotic = poisson_part; break;
    case Regime::Slow: asymptotic = env_part; break;
    case Regime::Intermediate: asymptotic = poisson_part + env_part; break;
  }
  return {exact, asymptotic};
}

/// Limiting variance of N^{-gamma/2}(M^(N) - E M^(N)).
inline double clt_sigma2(const EnvSpec& env, double mu, double delta, double alpha) {
  detail::require_positive(mu, "mu");
  detail::require_positive(delta, "delta");
  return env.mean() / mu * detail::fast_indicator(alpha) +
         delta * env.variance() / (2.0 * mu) * detail::slow_indicator(alpha);
}

/// Fluid path rho(t) = rho0 e^{-mu t} + (E Lambda / mu)(1 - e^{-mu t}).
inline double fluid_limit(double rho0, const EnvSpec& env, double mu, double t) {
  detail::require_positive(mu, "mu");
  if (!(t >= 0.0)) throw DomainError("t must be >= 0");
  const double p = std::exp(-mu * t);
  return rho0 * p + env.mean() / mu * -std::expm1(-mu * t);
}

inline LimitCovariance fclt_covariance(const EnvSpec& env, const QueueParams& queues, double delta,
                                       double alpha, std::span<const double> rho0, double t) {
  queues.validate();
  detail::require_positive(delta, "delta");
  if (!(t >= 0.0)) throw DomainError("t must be >= 0");
  const std::size_t d = queues.d();
  if (rho0.size() != d) throw DomainError("rho0 must have one entry per queue");
  const double fast = detail::fast_indicator(alpha);
  const double slow = detail::slow_indicator(alpha);
  const double env_var = delta * env.variance();
  LimitCovariance out{Matrix(d), regime_of(alpha)};
  for (std::size_t i = 0; i < d; ++i) {
    const double mi = queues.mu[i];
    const double pi = std::exp(-mi * t);
    out.matrix(i, i) = fast * (env.mean() / mi + rho0[i] * pi) * -std::expm1(-mi * t) +
                       slow * env_var / (2.0 * mi) * -std::expm1(-2.0 * mi * t);
    for (std::size_t k = i + 1; k < d; ++k) {
      const double m = mi + queues.mu[k];
      const double v = (fast * env.mean() / m + slow * env_var / m) * -std::expm1(-m * t);
      out.matrix(i, k) = v;
      out.matrix(k, i) = v;
    }
  }
  return out;
}

struct Correlation {
  double corr;     ///< limiting stationary correlation of queues i and k
  double c_const;  ///< c_ik(alpha) in [1, 2]
};

inline Correlation stationary_correlation(const EnvSpec& env, double mu_i, double mu_k, double delta,
                                          double alpha) {
  detail::require_positive(mu_i, "mu_i");
  detail::require_positive(mu_k, "mu_k");
  detail::require_positive(delta, "delta");
  const double fast = detail::fast_indicator(alpha) * env.mean();
  const double slow = detail::slow_indicator(alpha) * delta * env.variance();
  const double denom = fast + 0.5 * slow;
  if (!(denom > 0.0)) throw DomainError("correlation undefined: limiting variance is zero");
  const double c = (fast + slow) / denom;
  return {c * std::sqrt(mu_i * mu_k) / (mu_i + mu_k), c};
}

/// Large-N stationary covariance of queues i and k (asymptotically exact, not
/// a finite-N identity).
inline double scaled_covariance(const EnvSpec& env, double mu_i, double mu_k,
                                const ScalingRegime& scaling) {
  detail::require_positive(mu_i, "mu_i");
  detail::require_positive(mu_k, "mu_k");
  scaling.validate();
  const double n = static_cast<double>(scaling.N);
  const double d = scaling.delta;
  const double a = scaling.alpha;
  const double numer = env.mean() * d * std::pow(n, 1.0 - a) +
                       env.variance() * d * d * std::pow(n, 2.0 - 2.0 * a);
  return numer / -std::expm1(-(mu_i + mu_k) * scaling.slot_length());
}

}  // namespace coxq
