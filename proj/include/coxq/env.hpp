#pragma once

// Random environment: the law of the arrival-rate level Lambda, the scaling
// map (N, alpha, Delta) and piecewise-constant rate paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "coxq/errors.hpp"
#include "coxq/random.hpp"

namespace coxq {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Distance from an MGF domain boundary inside which evaluation is refused.
inline constexpr double kMgfBoundaryGuard = 1e-12;

struct Deterministic {
  double lambda;
};
struct Gamma {
  double shape;
  double scale;
};
struct Exponential {
  double rate;
};
struct DiscreteFinite {
  std::vector<double> values;
  std::vector<double> probs;
};

/// Distribution of the rate level Lambda. Every family has closed-form
/// moments, MGF and exponentially tilted law; adding a family means providing
/// the same set: mean, variance, mgf, log_mgf, tilted mean/variance, sample,
/// sample_sum, sample_twisted and essential_sup.
class EnvSpec {
 public:
  using Family = std::variant<Deterministic, Gamma, Exponential, DiscreteFinite>;

  EnvSpec() : EnvSpec(Deterministic{0.0}) {}

  explicit EnvSpec(Family family) : family_(std::move(family)) {
    std::visit([this](const auto& f) { init(f); }, family_);
  }

  static EnvSpec deterministic(double lambda) { return EnvSpec(Deterministic{lambda}); }
  static EnvSpec gamma(double shape, double scale) { return EnvSpec(Gamma{shape, scale}); }
  static EnvSpec exponential(double rate) { return EnvSpec(Exponential{rate}); }
  static EnvSpec discrete(std::vector<double> values, std::vector<double> probs) {
    return EnvSpec(DiscreteFinite{std::move(values), std::move(probs)});
  }

  const Family& family() const { return family_; }

  std::string_view family_name() const {
    constexpr std::string_view names[] = {"deterministic", "gamma", "exponential", "discrete"};
    return names[family_.index()];
  }

  double mean() const { return mean_; }
  double variance() const { return variance_; }

  /// Supremum of the (open) set of theta where E exp(theta Lambda) is finite.
  double mgf_upper() const { return mgf_upper_; }

 private:
  void init(const Deterministic& f) {
    if (!(f.lambda >= 0.0) || !std::isfinite(f.lambda))
      throw DomainError("deterministic rate must be finite and >= 0");
    mean_ = f.lambda;
    variance_ = 0.0;
    mgf_upper_ = kInf;
  }
  void init(const Gamma& f) {
    if (!(f.shape > 0.0) || !(f.scale > 0.0) || !std::isfinite(f.shape) || !std::isfinite(f.scale))
      throw DomainError("gamma shape and scale must be finite and > 0");
    mean_ = f.shape * f.scale;
    variance_ = f.shape * f.scale * f.scale;
    mgf_upper_ = 1.0 / f.scale;
  }
  void init(const Exponential& f) {
    if (!(f.rate > 0.0) || !std::isfinite(f.rate))
      throw DomainError("exponential rate must be finite and > 0");
    mean_ = 1.0 / f.rate;
    variance_ = 1.0 / (f.rate * f.rate);
    mgf_upper_ = f.rate;
  }
  void init(const DiscreteFinite& f) {
    if (f.values.empty() || f.values.size() != f.probs.size())
      throw DomainError("discrete law needs equally many values and probabilities");
    double total = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
      if (!(f.values[i] >= 0.0) || !std::isfinite(f.values[i]))
        throw DomainError("discrete values must be finite and >= 0");
      if (!(f.probs[i] >= 0.0)) throw DomainError("discrete probabilities must be >= 0");
      total += f.probs[i];
    }
    if (std::abs(total - 1.0) > 1e-12) throw DomainError("discrete probabilities must sum to 1");
    double m = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i) m += f.probs[i] * f.values[i];
    double v = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i)
      v += f.probs[i] * (f.values[i] - m) * (f.values[i] - m);
    mean_ = m;
    variance_ = v;
    mgf_upper_ = kInf;
  }

  Family family_;
  double mean_ = 0.0;
  double variance_ = 0.0;
  double mgf_upper_ = kInf;
};

namespace detail {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline void check_mgf_domain(const EnvSpec& env, double theta) {
  if (std::isnan(theta)) throw DomainError("MGF argument is NaN");
  if (theta >= env.mgf_upper() - kMgfBoundaryGuard)
    throw DomainError("MGF argument " + std::to_string(theta) + " outside the domain (< " +
                      std::to_string(env.mgf_upper()) + ") of the " +
                      std::string(env.family_name()) + " law");
}

// Exponentially tilted probabilities of a discrete law, computed in log space.
inline std::vector<double> tilted_weights(const DiscreteFinite& f, double theta) {
  double top = -kInf;
  for (std::size_t i = 0; i < f.values.size(); ++i)
    if (f.probs[i] > 0.0) top = std::max(top, std::log(f.probs[i]) + theta * f.values[i]);
  std::vector<double> w(f.values.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    if (f.probs[i] > 0.0) w[i] = std::exp(std::log(f.probs[i]) + theta * f.values[i] - top);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

inline std::size_t draw_index(const std::vector<double>& probs, RandomStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last;
}

inline double sum_of_discrete(const DiscreteFinite& f, const std::vector<double>& probs,
                              std::int64_t k, RandomStream& rng) {
  // Multinomial counts through sequential conditional binomials.
  double remaining_p = 1.0;
  std::int64_t remaining = k;
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size() && remaining > 0; ++i) {
    const double p = remaining_p > 0.0 ? std::min(1.0, probs[i] / remaining_p) : 1.0;
    const std::int64_t c = (i + 1 == probs.size()) ? remaining : rng.binomial(remaining, p);
    sum += static_cast<double>(c) * f.values[i];
    remaining -= c;
    remaining_p -= probs[i];
  }
  return sum;
}

}  // namespace detail

/// E exp(theta Lambda).
inline double mgf(const EnvSpec& env, double theta) {
  detail::check_mgf_domain(env, theta);
  return std::visit(
      detail::overloaded{
          [&](const Deterministic& f) { return std::exp(theta * f.lambda); },
          [&](const Gamma& f) { return std::pow(1.0 - f.scale * theta, -f.shape); },
          [&](const Exponential& f) { return f.rate / (f.rate - theta); },
          [&](const DiscreteFinite& f) {
            double s = 0.0;
            for (std::size_t i = 0; i < f.values.size(); ++i)
              s += f.probs[i] * std::exp(theta * f.values[i]);
            return s;
          }},
      env.family());
}

inline double log_mgf(const EnvSpec& env, double theta) {
  detail::check_mgf_domain(env, theta);
  return std::visit(
      detail::overloaded{
          [&](const Deterministic& f) { return theta * f.lambda; },
          [&](const Gamma& f) { return -f.shape * std::log1p(-f.scale * theta); },
          [&](const Exponential& f) { return -std::log1p(-theta / f.rate); },
          [&](const DiscreteFinite& f) {
            double top = -kInf;
            for (std::size_t i = 0; i < f.values.size(); ++i)
              if (f.probs[i] > 0.0) top = std::max(top, std::log(f.probs[i]) + theta * f.values[i]);
            double s = 0.0;
            for (std::size_t i = 0; i < f.values.size(); ++i)
              if (f.probs[i] > 0.0) s += std::exp(std::log(f.probs[i]) + theta * f.values[i] - top);
            return top + std::log(s);
          }},
      env.family());
}

/// d/dtheta log M(theta): the mean of the theta-tilted law.
inline double tilted_mean(const EnvSpec& env, double theta) {
  detail::check_mgf_domain(env, theta);
  return std::visit(
      detail::overloaded{
          [&](const Deterministic& f) { return f.lambda; },
          [&](const Gamma& f) { return f.shape * f.scale / (1.0 - f.scale * theta); },
          [&](const Exponential& f) { return 1.0 / (f.rate - theta); },
          [&](const DiscreteFinite& f) {
            const auto w = detail::tilted_weights(f, theta);
            double m = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) m += w[i] * f.values[i];
            return m;
          }},
      env.family());
}

/// d^2/dtheta^2 log M(theta): the variance of the theta-tilted law.
inline double tilted_variance(const EnvSpec& env, double theta) {
  detail::check_mgf_domain(env, theta);
  return std::visit(
      detail::overloaded{
          [&](const Deterministic&) { return 0.0; },
          [&](const Gamma& f) {
            const double s = f.scale / (1.0 - f.scale * theta);
            return f.shape * s * s;
          },
          [&](const Exponential& f) { return 1.0 / ((f.rate - theta) * (f.rate - theta)); },
          [&](const DiscreteFinite& f) {
            const auto w = detail::tilted_weights(f, theta);
            double m = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) m += w[i] * f.values[i];
            double v = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i)
              v += w[i] * (f.values[i] - m) * (f.values[i] - m);
            return v;
          }},
      env.family());
}

/// Smallest a.s. upper bound of Lambda (+inf for unbounded families).
inline double essential_sup(const EnvSpec& env) {
  return std::visit(detail::overloaded{
                        [](const Deterministic& f) { return f.lambda; },
                        [](const Gamma&) { return kInf; },
                        [](const Exponential&) { return kInf; },
                        [](const DiscreteFinite& f) {
                          double y = 0.0;
                          for (std::size_t i = 0; i < f.values.size(); ++i)
                            if (f.probs[i] > 0.0) y = std::max(y, f.values[i]);
                          return y;
                        }},
                    env.family());
}

inline double sample(const EnvSpec& env, RandomStream& rng) {
  return std::visit(
      detail::overloaded{[&](const Deterministic& f) { return f.lambda; },
                         [&](const Gamma& f) { return rng.gamma(f.shape, f.scale); },
                         [&](const Exponential& f) { return rng.exponential(f.rate); },
                         [&](const DiscreteFinite& f) {
                           return f.values[detail::draw_index(f.probs, rng)];
                         }},
      env.family());
}

/// One draw from the eta-tilted law Q(dx) = e^{eta x} P(dx) / M(eta).
inline double sample_twisted(const EnvSpec& env, double eta, RandomStream& rng) {
  detail::check_mgf_domain(env, eta);
  return std::visit(
      detail::overloaded{
          [&](const Deterministic& f) { return f.lambda; },
          [&](const Gamma& f) { return rng.gamma(f.shape, f.scale / (1.0 - f.scale * eta)); },
          [&](const Exponential& f) { return rng.exponential(f.rate - eta); },
          [&](const DiscreteFinite& f) {
            return f.values[detail::draw_index(detail::tilted_weights(f, eta), rng)];
          }},
      env.family());
}

/// Sum of k i.i.d. draws from the eta-tilted law (eta = 0: the plain law),
/// drawn in O(1) (O(#atoms) for discrete laws) instead of O(k).
inline double sample_sum(const EnvSpec& env, std::int64_t k, RandomStream& rng, double eta = 0.0) {
  if (k <= 0) return 0.0;
  if (k == 1) return eta == 0.0 ? sample(env, rng) : sample_twisted(env, eta, rng);
  detail::check_mgf_domain(env, eta);
  const double kk = static_cast<double>(k);
  return std::visit(
      detail::overloaded{
          [&](const Deterministic& f) { return kk * f.lambda; },
          [&](const Gamma& f) { return rng.gamma(kk * f.shape, f.scale / (1.0 - f.scale * eta)); },
          [&](const Exponential& f) { return rng.gamma(kk, 1.0 / (f.rate - eta)); },
          [&](const DiscreteFinite& f) {
            return eta == 0.0 ? detail::sum_of_discrete(f, f.probs, k, rng)
                              : detail::sum_of_discrete(f, detail::tilted_weights(f, eta), k, rng);
          }},
      env.family());
}

/// The scaling Lambda -> N Lambda, 1/Delta -> N^alpha / Delta.
struct ScalingRegime {
  std::int64_t N = 1;
  double alpha = 0.0;
  double delta = 1.0;

  ScalingRegime() = default;
  ScalingRegime(std::int64_t n, double a, double d) : N(n), alpha(a), delta(d) { validate(); }

  void validate() const {
    if (N < 1) throw DomainError("N must be a positive integer");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and >= 0");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw DomainError("delta must be finite and > 0");
  }

  /// Delta_N = Delta N^{-alpha}.
  double slot_length() const { return delta * std::pow(static_cast<double>(N), -alpha); }
  /// Variance growth exponent max{1, 2 - alpha}.
  double gamma() const { return std::max(1.0, 2.0 - alpha); }
  /// Fluctuation exponent min{1, alpha}; gamma() + beta() == 2.
  double beta() const { return std::min(1.0, alpha); }
};

/// Realized piecewise-constant rate path: Lambda(t) = rates[floor(t / slot_length)].
struct RatePath {
  double slot_length = 1.0;
  std::vector<double> rates;
  double horizon = 0.0;

  double rate_at(double t) const {
    if (t < 0.0 || t >= horizon) throw RangeError("rate_at: t outside [0, horizon)");
    const auto j = std::min(static_cast<std::size_t>(t / slot_length), rates.size() - 1);
    return rates[j];
  }
};

inline std::size_t slot_count(double horizon, double slot_length) {
  auto n = static_cast<std::size_t>(std::ceil(horizon / slot_length));
  while (n > 0 && static_cast<double>(n - 1) * slot_length >= horizon) --n;
  while (static_cast<double>(n) * slot_length < horizon) ++n;
  return n;
}

/// I.i.d. slot levels on [0, horizon); slot j covers [j Delta_N, (j+1) Delta_N).
/// The queue-facing rate is N * rates[j]; the factor N is not stored.
inline RatePath sample_rate_path(const EnvSpec& env, const ScalingRegime& scaling, double horizon,
                                 RandomStream& rng) {
  if (!(horizon > 0.0)) throw DomainError("sample_rate_path: horizon must be > 0");
  RatePath path;
  path.slot_length = scaling.slot_length();
  path.horizon = horizon;
  const std::size_t n = slot_count(horizon, path.slot_length);
  path.rates.reserve(n);
  for (std::size_t j = 0; j < n; ++j) path.rates.push_back(sample(env, rng));
  return path;
}

/// Psi[Lambda](t) = integral of the path over [0, t].
inline double cumulative_rate(const RatePath& path, double t) {
  if (t < 0.0) throw RangeError("cumulative_rate: t < 0");
  if (t > path.horizon) throw RangeError("cumulative_rate: t beyond the path horizon");
  const auto full = std::min(static_cast<std::size_t>(std::floor(t / path.slot_length)),
                             path.rates.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < full; ++j) acc += path.rates[j];
  acc *= path.slot_length;
  const double rest = t - static_cast<double>(full) * path.slot_length;
  if (full < path.rates.size() && rest > 0.0) acc += path.rates[full] * rest;
  return acc;
}

}  // namespace coxq
