#pragma once

// Large-deviations decay rates of the scaled queue length in the three
// regimes, and importance-sampling estimators of the corresponding tail
// probabilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "coxq/analytic.hpp"
#include "coxq/env.hpp"
#include "coxq/errors.hpp"
#include "coxq/parallel.hpp"
#include "coxq/quadrature.hpp"
#include "coxq/random.hpp"
#include "coxq/sim.hpp"
#include "coxq/stats.hpp"

namespace coxq {

enum class LdRegime { Fast, SlowUnbounded, SlowBounded, Intermediate };

inline std::string to_string(LdRegime r) {
  switch (r) {
    case LdRegime::Fast: return "fast";
    case LdRegime::SlowUnbounded: return "slow-unbounded";
    case LdRegime::SlowBounded: return "slow-bounded";
    case LdRegime::Intermediate: return "intermediate";
  }
  return "unknown";
}

/// Normalizing sequence N^exponent / divisor of a decay rate.
struct Speed {
  double exponent = 1.0;
  double divisor = 1.0;

  double at(double n) const { return std::pow(n, exponent) / divisor; }

  std::string describe() const {
    std::string s = exponent == 1.0 ? "N" : "N^" + format_number(exponent);
    if (divisor != 1.0) s += "/" + format_number(divisor);
    return s;
  }
};

struct RateDiagnostics {
  double quadrature_error = 0.0;
  int iterations = 0;
  double stationarity_residual = 0.0;
};

struct RateResult {
  double rate = 0.0;
  std::vector<double> theta_star;
  LdRegime regime = LdRegime::Fast;
  Speed speed;
  RateDiagnostics diagnostics;
};

/// Tail query P(M(t) >= N a) for a system started empty at time 0. mu and a
/// have one entry per queue (rectangle prod [a_i, inf) when d > 1).
struct RateQuery {
  EnvSpec env;
  std::vector<double> mu;
  double delta = 1.0;
  double alpha = 0.0;
  double t = 1.0;
  std::vector<double> a;

  std::size_t d() const { return mu.size(); }

  void validate() const {
    QueueParams(mu).validate();
    if (a.size() != mu.size()) throw DomainError("a must have one entry per queue");
    detail::require_positive(delta, "delta");
    detail::require_positive(t, "t");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and >= 0");
  }
};

/// rho(t) = (E Lambda / mu)(1 - e^{-mu t}).
inline double fluid_level(const EnvSpec& env, double mu, double t) {
  detail::require_positive(mu, "mu");
  return env.mean() * -std::expm1(-mu * t) / mu;
}

/// u(t) = y (1 - e^{-mu t}) / mu with y the essential supremum of Lambda.
inline double fluid_ceiling(const EnvSpec& env, double mu, double t) {
  detail::require_positive(mu, "mu");
  const double y = essential_sup(env);
  return std::isinf(y) ? kInf : y * -std::expm1(-mu * t) / mu;
}

namespace detail {

inline constexpr double kRateQuadTol = 1e-10;
inline constexpr double kDerivQuadTol = 1e-12;

inline void require_univariate(const RateQuery& q) {
  q.validate();
  if (q.d() != 1) throw DomainError("univariate operation called with " + std::to_string(q.d()) + " queues");
}

inline void require_above_fluid(double a, double rho) {
  if (!(a > rho)) throw DomainError("tail level a = " + std::to_string(a) +
                                    " must exceed the fluid level rho(t) = " + std::to_string(rho));
}

/// f(theta) = a - L'(theta), L'' > 0: maximize theta a - L(theta) on [0, upper).
struct ConcaveObjective {
  std::function<QuadratureResult(double)> value;  // L
  std::function<double(double)> slope;            // L'
  std::function<double(double)> curvature;        // L''
  double upper;                                   // open bound on theta (inf allowed)
};

struct Maximum {
  double theta;
  double sup;
  double residual;
  double quad_error;
  int iterations;
};

inline Maximum maximize_concave(const ConcaveObjective& f, double a) {
  int iterations = 0;
  double lo = 0.0;
  double hi;
  if (std::isfinite(f.upper)) {
    hi = f.upper - 2.0 * kMgfBoundaryGuard * std::max(1.0, std::abs(f.upper));
    if (a - f.slope(hi) > 0.0)
      throw ConvergenceError("the maximizer lies within " + std::to_string(f.upper - hi) +
                             " of the MGF domain boundary");
  } else {
    hi = 1.0;
    while (a - f.slope(hi) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (++iterations > 200) throw ConvergenceError("could not bracket the maximizer");
    }
  }
  double theta = 0.5 * (lo + hi);
  double g = a - f.slope(theta);
  for (; iterations < 400; ++iterations) {
    if (std::abs(g) < 1e-11) break;
    if (g > 0.0) lo = theta; else hi = theta;
    const double h = f.curvature(theta);
    double next = h > 0.0 ? theta + g / h : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == theta || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
    theta = next;
    g = a - f.slope(theta);
  }
  const auto v = f.value(theta);
  return {theta, theta * a - v.value, std::abs(g), v.abs_error, iterations};
}

// Arguments of log M along s for the slow and intermediate objectives.
inline double intermediate_scale(double theta, double delta) { return delta * std::expm1(theta / delta); }

}  // namespace detail

/// int_0^t log M(theta e^{-mu s}) ds by adaptive quadrature in s.
inline QuadratureResult integrated_log_mgf_quad(const EnvSpec& env, double mu, double t, double theta,
                                                double abs_tol = detail::kRateQuadTol) {
  detail::require_positive(mu, "mu");
  if (!(t >= 0.0)) throw DomainError("t must be >= 0");
  detail::check_mgf_domain(env, theta);
  if (theta == 0.0 || t == 0.0) return {};
  return integrate([&](double s) { return log_mgf(env, theta * std::exp(-mu * s)); }, 0.0, t, abs_tol);
}

inline double integrated_log_mgf(const EnvSpec& env, double mu, double t, double theta) {
  return integrated_log_mgf_quad(env, mu, t, theta).value;
}

/// The same integral after u = theta e^{-mu s}: (1/mu) int_{theta e^{-mu t}}^{theta} log M(u)/u du.
inline QuadratureResult integrated_log_mgf_substituted(const EnvSpec& env, double mu, double t,
                                                       double theta,
                                                       double abs_tol = detail::kRateQuadTol) {
  detail::require_positive(mu, "mu");
  if (!(t >= 0.0)) throw DomainError("t must be >= 0");
  detail::check_mgf_domain(env, theta);
  if (theta == 0.0 || t == 0.0) return {};
  auto r = integrate([&](double u) { return log_mgf(env, u) / u; }, theta * std::exp(-mu * t), theta,
                     abs_tol * mu);
  r.value /= mu;
  r.abs_error /= mu;
  return r;
}

/// d/dtheta of integrated_log_mgf: int_0^t e^{-mu s} E_{theta e^{-mu s}}[Lambda] ds.
inline double integrated_log_mgf_slope(const EnvSpec& env, double mu, double t, double theta) {
  detail::check_mgf_domain(env, theta);
  return integrate(
             [&](double s) {
               const double w = std::exp(-mu * s);
               return w * tilted_mean(env, theta * w);
             },
             0.0, t, detail::kDerivQuadTol)
      .value;
}

/// Closed form a log(rho/a) - rho + a, speed N.
inline RateResult rate_fast(double rho_t, double a) {
  detail::require_positive(rho_t, "rho(t)");
  detail::require_above_fluid(a, rho_t);
  RateResult r;
  r.rate = a * std::log(rho_t / a) - rho_t + a;
  r.theta_star = {std::log(a / rho_t)};
  r.regime = LdRegime::Fast;
  r.speed = {1.0, 1.0};
  return r;
}

/// Slow regime with u(t) >= a: -sup_theta (theta a - int log M(theta e^{-mu s}) ds),
/// speed N^alpha / Delta.
inline RateResult rate_slow(const RateQuery& q) {
  detail::require_univariate(q);
  const double mu = q.mu[0], a = q.a[0];
  if (!(q.alpha < 1.0)) throw RegimeError("rate_slow requires alpha < 1");
  detail::require_above_fluid(a, fluid_level(q.env, mu, q.t));
  const double u = fluid_ceiling(q.env, mu, q.t);
  if (u < a) throw RegimeError("u(t) = " + std::to_string(u) + " < a: use rate_slow_bounded");
  detail::ConcaveObjective f{
      [&](double th) { return integrated_log_mgf_quad(q.env, mu, q.t, th); },
      [&](double th) { return integrated_log_mgf_slope(q.env, mu, q.t, th); },
      [&](double th) {
        return integrate(
                   [&](double s) {
                     const double w = std::exp(-mu * s);
                     return w * w * tilted_variance(q.env, th * w);
                   },
                   0.0, q.t, detail::kDerivQuadTol)
            .value;
      },
      q.env.mgf_upper()};
  const auto m = detail::maximize_concave(f, a);
  RateResult r;
  r.rate = -m.sup;
  r.theta_star = {m.theta};
  r.regime = LdRegime::SlowUnbounded;
  r.speed = {q.alpha, q.delta};
  r.diagnostics = {m.quad_error, m.iterations, m.residual};
  return r;
}

/// Slow regime with u(t) < a: a log(u/a) + a - u, speed N.
inline RateResult rate_slow_bounded(const RateQuery& q) {
  detail::require_univariate(q);
  const double mu = q.mu[0], a = q.a[0];
  if (std::isinf(essential_sup(q.env)))
    throw UnsupportedFamily("rate_slow_bounded needs a bounded rate law, got " +
                            std::string(q.env.family_name()));
  detail::require_above_fluid(a, fluid_level(q.env, mu, q.t));
  const double u = fluid_ceiling(q.env, mu, q.t);
  if (u >= a) throw RegimeError("u(t) = " + std::to_string(u) + " >= a: use rate_slow");
  RateResult r;
  r.rate = a * std::log(u / a) - u + a;
  r.theta_star = {std::log(a / u)};
  r.regime = LdRegime::SlowBounded;
  r.speed = {1.0, 1.0};
  return r;
}

/// alpha = 1: -sup_theta (theta a - int log M(Delta (e^{theta/Delta} - 1) e^{-mu s}) ds),
/// speed N / Delta.
inline RateResult rate_intermediate(const RateQuery& q) {
  detail::require_univariate(q);
  const double mu = q.mu[0], a = q.a[0], dl = q.delta;
  detail::require_above_fluid(a, fluid_level(q.env, mu, q.t));
  const double upper = std::isfinite(q.env.mgf_upper()) ? dl * std::log1p(q.env.mgf_upper() / dl) : kInf;
  auto lm = [&](double th) {
    const double c = detail::intermediate_scale(th, dl);
    return integrate([&](double s) { return log_mgf(q.env, c * std::exp(-mu * s)); }, 0.0, q.t,
                     detail::kRateQuadTol);
  };
  detail::ConcaveObjective f{
      lm,
      [&](double th) {
        const double c = detail::intermediate_scale(th, dl);
        const double e = std::exp(th / dl);
        return integrate(
                   [&](double s) {
                     const double w = std::exp(-mu * s);
                     return e * w * tilted_mean(q.env, c * w);
                   },
                   0.0, q.t, detail::kDerivQuadTol)
            .value;
      },
      [&](double th) {
        const double c = detail::intermediate_scale(th, dl);
        const double e = std::exp(th / dl);
        return integrate(
                   [&](double s) {
                     const double w = std::exp(-mu * s);
                     const double x = c * w;
                     return e * w * e * w * tilted_variance(q.env, x) + e * w * tilted_mean(q.env, x) / dl;
                   },
                   0.0, q.t, detail::kDerivQuadTol)
            .value;
      },
      upper};
  const auto m = detail::maximize_concave(f, a);
  RateResult r;
  r.rate = -m.sup;
  r.theta_star = {m.theta};
  r.regime = LdRegime::Intermediate;
  r.speed = {1.0, dl};
  r.diagnostics = {m.quad_error, m.iterations, m.residual};
  return r;
}

inline LdRegime classify_regime(const RateQuery& q) {
  q.validate();
  for (std::size_t i = 0; i < q.d(); ++i) detail::require_above_fluid(q.a[i], fluid_level(q.env, q.mu[i], q.t));
  if (q.alpha > 1.0) return LdRegime::Fast;
  if (q.alpha == 1.0) return LdRegime::Intermediate;
  for (std::size_t i = 0; i < q.d(); ++i)
    if (fluid_ceiling(q.env, q.mu[i], q.t) < q.a[i]) return LdRegime::SlowBounded;
  return LdRegime::SlowUnbounded;
}

/// Dispatches a univariate query to the rate of its regime.
inline RateResult decay_rate(const RateQuery& q) {
  detail::require_univariate(q);
  switch (classify_regime(q)) {
    case LdRegime::Fast: return rate_fast(fluid_level(q.env, q.mu[0], q.t), q.a[0]);
    case LdRegime::Intermediate: return rate_intermediate(q);
    case LdRegime::SlowBounded: return rate_slow_bounded(q);
    case LdRegime::SlowUnbounded: return rate_slow(q);
  }
  throw RegimeError("unclassified query");
}

namespace detail {

/// L(theta) and its gradient for the joint law of the d queue lengths.
struct JointLogMgf {
  const RateQuery& q;
  LdRegime regime;

  // Integrand pieces at time s for the fast and intermediate products.
  double product(const std::vector<double>& theta, double s, double scale) const {
    double p = 1.0;
    for (std::size_t i = 0; i < theta.size(); ++i)
      p *= std::exp(-q.mu[i] * s) * std::expm1(theta[i] / scale) + 1.0;
    return p;
  }

  bool in_domain(const std::vector<double>& theta) const {
    const double up = q.env.mgf_upper();
    if (!std::isfinite(up)) return true;
    double x = 0.0;
    switch (regime) {
      case LdRegime::Fast: return true;
      case LdRegime::Intermediate: x = q.delta * (product(theta, 0.0, q.delta) - 1.0); break;
      default:
        for (double th : theta) x += th;
    }
    return x < up - kMgfBoundaryGuard;
  }

  QuadratureResult value(const std::vector<double>& theta) const {
    switch (regime) {
      case LdRegime::Fast: {
        auto r = integrate([&](double s) { return product(theta, s, 1.0) - 1.0; }, 0.0, q.t, kDerivQuadTol);
        r.value *= q.env.mean();
        r.abs_error *= q.env.mean();
        return r;
      }
      case LdRegime::Intermediate:
        return integrate(
            [&](double s) { return log_mgf(q.env, q.delta * (product(theta, s, q.delta) - 1.0)); }, 0.0,
            q.t, kDerivQuadTol);
      default:
        return integrate(
            [&](double s) {
              double x = 0.0;
              for (std::size_t i = 0; i < theta.size(); ++i) x += theta[i] * std::exp(-q.mu[i] * s);
              return log_mgf(q.env, x);
            },
            0.0, q.t, kDerivQuadTol);
    }
  }

  double partial(const std::vector<double>& theta, std::size_t i) const {
    switch (regime) {
      case LdRegime::Fast:
        return q.env.mean() * integrate(
                                  [&](double s) {
                                    const double wi = std::exp(-q.mu[i] * s);
                                    return product(theta, s, 1.0) * wi * std::exp(theta[i]) /
                                           (wi * std::expm1(theta[i]) + 1.0);
                                  },
                                  0.0, q.t, kDerivQuadTol)
                                  .value;
      case LdRegime::Intermediate:
        return integrate(
                   [&](double s) {
                     const double p = product(theta, s, q.delta);
                     const double wi = std::exp(-q.mu[i] * s);
                     const double ei = std::exp(theta[i] / q.delta);
                     return tilted_mean(q.env, q.delta * (p - 1.0)) * p * wi * ei / (wi * (ei - 1.0) + 1.0);
                   },
                   0.0, q.t, kDerivQuadTol)
            .value;
      default:
        return integrate(
                   [&](double s) {
                     double x = 0.0;
                     for (std::size_t k = 0; k < theta.size(); ++k) x += theta[k] * std::exp(-q.mu[k] * s);
                     return std::exp(-q.mu[i] * s) * tilted_mean(q.env, x);
                   },
                   0.0, q.t, kDerivQuadTol)
            .value;
    }
  }
};

}  // namespace detail

/// Decay rate of P(M_i(t) >= N a_i for all i). The inner sup over theta >= 0
/// uses projected BFGS with quadrature gradients; the outer inf over the
/// rectangle is attained at its corner a.
inline RateResult rate_multivariate(const RateQuery& q) {
  q.validate();
  const std::size_t d = q.d();
  const LdRegime regime = classify_regime(q);
  if (regime == LdRegime::SlowBounded)
    throw RegimeError("the bounded slow regime has no multivariate rate here");
  if (regime == LdRegime::SlowUnbounded && std::isfinite(essential_sup(q.env)))
    throw RegimeError("multivariate slow rate needs an unbounded rate law");
  detail::JointLogMgf joint{q, regime};

  // phi(theta) = L(theta) - <theta, a> is convex; rate = min phi.
  auto phi = [&](const std::vector<double>& th, double* err) {
    if (!joint.in_domain(th)) return kInf;
    const auto v = joint.value(th);
    if (err) *err = v.abs_error;
    return v.value - std::inner_product(th.begin(), th.end(), q.a.begin(), 0.0);
  };
  auto grad = [&](const std::vector<double>& th) {
    std::vector<double> g(d);
    for (std::size_t i = 0; i < d; ++i) g[i] = joint.partial(th, i) - q.a[i];
    return g;
  };
  auto projected_norm = [&](const std::vector<double>& th, const std::vector<double>& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      if (!(th[i] == 0.0 && g[i] > 0.0)) s += g[i] * g[i];
    return std::sqrt(s);
  };

  std::vector<double> theta(d, 0.0);
  double value = 0.0;
  std::vector<double> g = grad(theta);
  std::vector<double> h(d * d, 0.0);
  auto reset = [&] {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) h[i * d + i] = 1.0;
  };
  reset();
  int it = 0;
  double pg = projected_norm(theta, g);
  for (; it < 500 && pg > 1e-11; ++it) {
    std::vector<bool> active(d);
    for (std::size_t i = 0; i < d; ++i) active[i] = theta[i] == 0.0 && g[i] > 0.0;
    std::vector<double> p(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
      if (active[i]) continue;
      for (std::size_t k = 0; k < d; ++k)
        if (!active[k]) p[i] -= h[i * d + k] * g[k];
    }
    double slope = std::inner_product(p.begin(), p.end(), g.begin(), 0.0);
    if (!(slope < 0.0)) {
      reset();
      for (std::size_t i = 0; i < d; ++i) p[i] = active[i] ? 0.0 : -g[i];
      slope = std::inner_product(p.begin(), p.end(), g.begin(), 0.0);
    }
    double step = 1.0;
    std::vector<double> next(d);
    double next_value = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls, step *= 0.5) {
      for (std::size_t i = 0; i < d; ++i) next[i] = std::max(0.0, theta[i] + step * p[i]);
      next_value = phi(next, nullptr);
      double decrease = 0.0;
      for (std::size_t i = 0; i < d; ++i) decrease += g[i] * (next[i] - theta[i]);
      if (next_value <= value + 1e-4 * decrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const auto next_g = grad(next);
    std::vector<double> s(d), y(d);
    for (std::size_t i = 0; i < d; ++i) {
      s[i] = next[i] - theta[i];
      y[i] = next_g[i] - g[i];
    }
    const double sy = std::inner_product(s.begin(), s.end(), y.begin(), 0.0);
    if (sy > 1e-300) {
      // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
      const double rho = 1.0 / sy;
      std::vector<double> hy(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k) hy[i] += h[i * d + k] * y[k];
      const double yhy = std::inner_product(y.begin(), y.end(), hy.begin(), 0.0);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k)
          h[i * d + k] += -rho * (hy[i] * s[k] + s[i] * hy[k]) + (rho * rho * yhy + rho) * s[i] * s[k];
    }
    theta = next;
    value = next_value;
    g = next_g;
    pg = projected_norm(theta, g);
  }
  if (pg > 1e-6)
    throw ConvergenceError("rate_multivariate: projected gradient " + std::to_string(pg) + " after " +
                           std::to_string(it) + " iterations");
  double err = 0.0;
  value = phi(theta, &err);
  RateResult r;
  r.rate = value;
  r.theta_star = theta;
  r.regime = regime;
  switch (regime) {
    case LdRegime::Fast: r.speed = {1.0, 1.0}; break;
    case LdRegime::Intermediate: r.speed = {1.0, q.delta}; break;
    default: r.speed = {q.alpha, q.delta};
  }
  r.diagnostics = {err, it, pg};
  return r;
}

/// log P(Poisson(lambda) >= n).
inline double log_poisson_tail(double lambda, std::int64_t n) {
  if (n <= 0) return 0.0;
  if (!(lambda > 0.0)) return -kInf;
  const double nn = static_cast<double>(n);
  if (lambda >= nn) return std::log(boost::math::gamma_p(nn, lambda));
  // log pmf(n) + log sum_k lambda^k n! / (n + k)!
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 100000; ++k) {
    term *= lambda / (nn + k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return nn * std::log(lambda) - lambda - std::lgamma(nn + 1.0) + std::log(sum);
}

enum class TailTarget {
  Proxy,  ///< P(k_t >= a), k_t the left Riemann sum of the kernel over slots
  Queue,  ///< P(M(t) >= N a) with M(t) | kappa_t ~ Poisson(N kappa_t)
};

struct TailEstimate {
  double prob = 0.0;
  double log_prob = -kInf;
  double rel_err = kInf;
  double tilted_mean = 0.0;     ///< mean of k_t (or kappa_t) under the tilted measure
  double proxy_mean_gap = 0.0;  ///< |E k_t - rho(t)|
  double theta = 0.0;           ///< tilt used
  std::int64_t replications = 0;
};

namespace detail {

inline void require_matching_scaling(const RateQuery& q, const ScalingRegime& scaling) {
  scaling.validate();
  if (q.alpha != scaling.alpha || q.delta != scaling.delta)
    throw DomainError("query and scaling disagree on alpha or delta");
}

inline TailEstimate finish_estimate(const std::vector<double>& log_w, const std::vector<double>& means,
                                    double theta) {
  const auto lm = log_mean_exp(log_w);
  TailEstimate e;
  e.log_prob = lm.log_mean;
  e.prob = std::exp(lm.log_mean);
  e.rel_err = lm.rel_err;
  e.tilted_mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
  e.theta = theta;
  e.replications = static_cast<std::int64_t>(log_w.size());
  return e;
}

}  // namespace detail

/// Slow-regime importance sampling. Slot j (counted back from t) is drawn
/// from the law tilted by eta_j = theta* w_j / Delta_N, where w_j is the
/// slot's weight in k_t (Proxy) or kappa_t (Queue); the likelihood ratio is
/// exp(sum_j log M(eta_j) - theta* X / Delta_N), X = k_t or kappa_t, so the
/// tilted mean of X equals a in the limit.
inline TailEstimate is_estimate_tail(const RateQuery& q, const ScalingRegime& scaling,
                                     std::int64_t replications, RandomStream& rng,
                                     TailTarget target = TailTarget::Proxy, unsigned threads = 0) {
  detail::require_univariate(q);
  detail::require_matching_scaling(q, scaling);
  const double mu = q.mu[0], a = q.a[0];
  const double rho = fluid_level(q.env, mu, q.t);
  if (!(a > rho)) throw DegenerateQuery("a <= rho(t): the event is not rare, use plain Monte Carlo");
  if (replications < 2) throw InsufficientData("importance sampling needs at least two replications");
  const auto rate = rate_slow(q);
  const double theta = rate.theta_star[0];
  const double slot = scaling.slot_length();

  // Slot weights, nearest to t first.
  std::vector<double> w;
  if (target == TailTarget::Proxy) {
    const auto n = static_cast<std::size_t>(std::floor(q.t / slot));
    for (std::size_t j = 0; j < n; ++j) w.push_back(slot * std::exp(-mu * slot * static_cast<double>(j)));
  } else {
    const double n = std::floor(q.t / slot);
    double first = q.t - n * slot;
    if (first >= slot) first = 0.0;
    CellResolution exact;
    exact.exact_slots = true;
    detail::for_each_backward_cell(q.t, slot, first, mu, exact, [&](std::int64_t, double tau, double len) {
      w.push_back(detail::decay_integral(mu, tau, len));
    });
  }
  std::vector<double> eta(w.size()), log_m(w.size());
  double log_z = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    eta[j] = theta * w[j] / slot;
    log_m[j] = log_mgf(q.env, eta[j]);
    log_z += log_m[j];
  }
  const double n_scale = static_cast<double>(scaling.N);
  const auto level = static_cast<std::int64_t>(std::ceil(n_scale * a - 1e-9));
  const std::uint64_t seed = rng.next_u64();
  std::vector<double> log_w(static_cast<std::size_t>(replications)), means(log_w.size());
  parallel_for(log_w.size(), threads, [&](std::size_t r) {
    RandomStream local = RandomStream::derive(seed, r);
    double x = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) x += w[j] * sample_twisted(q.env, eta[j], local);
    means[r] = x;
    const double log_lr = log_z - theta * x / slot;
    if (target == TailTarget::Proxy) {
      log_w[r] = x >= a ? log_lr : -kInf;
    } else {
      log_w[r] = log_lr + log_poisson_tail(n_scale * x, level);
    }
  });
  auto e = detail::finish_estimate(log_w, means, theta);
  double proxy_mean = 0.0;
  if (target == TailTarget::Proxy) {
    for (double v : w) proxy_mean += v;
    proxy_mean *= q.env.mean();
  } else {
    proxy_mean = rho;
  }
  e.proxy_mean_gap = std::abs(proxy_mean - rho);
  return e;
}

/// Joint exponential tilt of the Poisson layer and the rate levels for the
/// fast, intermediate and bounded-slow regimes: estimates P(M(t) >= N a) for
/// a queue started empty at time 0. Under the tilt, M(t) | kappa ~
/// Poisson(N kappa e^theta) and slot j is tilted by N (e^theta - 1) w_j.
inline TailEstimate is_estimate_poisson_tail(const RateQuery& q, const ScalingRegime& scaling,
                                             std::int64_t replications, RandomStream& rng,
                                             const CellResolution& res = {}, unsigned threads = 0) {
  detail::require_univariate(q);
  detail::require_matching_scaling(q, scaling);
  const double mu = q.mu[0], a = q.a[0];
  const double rho = fluid_level(q.env, mu, q.t);
  if (!(a > rho)) throw DegenerateQuery("a <= rho(t): the event is not rare, use plain Monte Carlo");
  if (replications < 2) throw InsufficientData("importance sampling needs at least two replications");
  double theta = 0.0;
  switch (classify_regime(q)) {
    case LdRegime::Fast: theta = std::log(a / rho); break;
    case LdRegime::Intermediate: theta = rate_intermediate(q).theta_star[0] / q.delta; break;
    case LdRegime::SlowBounded: theta = std::log(a / fluid_ceiling(q.env, mu, q.t)); break;
    case LdRegime::SlowUnbounded:
      throw RegimeError("use is_estimate_tail for the unbounded slow regime");
  }
  const double slot = scaling.slot_length();
  const double n_scale = static_cast<double>(scaling.N);
  const double tilt = n_scale * std::expm1(theta);

  struct Cell {
    std::int64_t k;
    double w;  // weight per slot
    double eta;
  };
  std::vector<Cell> cells;
  double log_z = 0.0;
  const double n = std::floor(q.t / slot);
  double first = q.t - n * slot;
  if (first >= slot) first = 0.0;
  detail::for_each_backward_cell(q.t, slot, first, mu, res, [&](std::int64_t k, double tau, double len) {
    const double w = detail::decay_integral(mu, tau, len) / static_cast<double>(k);
    cells.push_back({k, w, tilt * w});
    log_z += static_cast<double>(k) * log_mgf(q.env, tilt * w);
  });
  const auto level = static_cast<std::int64_t>(std::ceil(n_scale * a - 1e-9));
  const std::uint64_t seed = rng.next_u64();
  std::vector<double> log_w(static_cast<std::size_t>(replications)), means(log_w.size());
  parallel_for(log_w.size(), threads, [&](std::size_t r) {
    RandomStream local = RandomStream::derive(seed, r);
    double kappa = 0.0;
    for (const auto& c : cells) kappa += c.w * sample_sum(q.env, c.k, local, c.eta);
    means[r] = kappa;
    const std::int64_t x = local.poisson(n_scale * kappa * std::exp(theta));
    log_w[r] = x >= level ? log_z - theta * static_cast<double>(x) : -kInf;
  });
  auto e = detail::finish_estimate(log_w, means, theta);
  e.proxy_mean_gap = 0.0;
  return e;
}

struct SlopeFit {
  double slope = 0.0;
  double slope_se = 0.0;
  double intercept = 0.0;
  double uncorrected_slope = 0.0;
};

/// WLS slope of log P against the speed s_N with weights 1/rel_err^2. The
/// corrected fit regresses log P + (1/2) log s_N, removing the s^{-1/2}
/// prefactor of the tail so the slope isolates the exponential rate.
inline SlopeFit estimate_decay_slope(std::span<const double> speeds, std::span<const double> log_probs,
                                     std::span<const double> rel_errs) {
  if (speeds.size() != log_probs.size() || speeds.size() != rel_errs.size())
    throw InsufficientData("slope fit needs matching speed, log-probability and error vectors");
  std::vector<double> w(speeds.size()), corrected(speeds.size());
  for (std::size_t i = 0; i < speeds.size(); ++i) {
    if (!std::isfinite(log_probs[i]) || !(rel_errs[i] > 0.0) || !std::isfinite(rel_errs[i]))
      throw InsufficientData("slope fit needs finite estimates with positive errors");
    w[i] = 1.0 / (rel_errs[i] * rel_errs[i]);
    corrected[i] = log_probs[i] + 0.5 * std::log(speeds[i]);
  }
  const auto fit = weighted_least_squares(speeds, corrected, w);
  const auto raw = weighted_least_squares(speeds, log_probs, w);
  return {fit.slope, fit.slope_se, fit.intercept, raw.slope};
}

}  // namespace coxq
