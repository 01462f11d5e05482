#pragma once

// Sample statistics used by the estimators and the experiment harness.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "coxq/errors.hpp"

namespace coxq {

struct SampleSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;     ///< unbiased (n - 1 denominator)
  double m3 = 0.0;           ///< third central moment (1/n)
  double m4 = 0.0;           ///< fourth central moment (1/n)
  double mean_se = 0.0;      ///< sd / sqrt(n)
  double variance_se = 0.0;  ///< sqrt((m4 - s^4) / n)

  /// Standard error of variance / mean by the delta method.
  double dispersion_ratio_se() const {
    if (mean == 0.0) return 0.0;
    const double nn = static_cast<double>(n);
    const double s2 = variance;
    const double var_s2 = std::max(0.0, (m4 - s2 * s2) / nn);
    const double var_m = s2 / nn;
    const double cov = m3 / nn;
    const double g = 1.0 / mean;
    const double h = -s2 / (mean * mean);
    return std::sqrt(std::max(0.0, g * g * var_s2 + h * h * var_m + 2.0 * g * h * cov));
  }
};

inline SampleSummary summarize(std::span<const double> x) {
  if (x.size() < 2) throw InsufficientData("at least two observations are required");
  SampleSummary s;
  s.n = x.size();
  const double n = static_cast<double>(s.n);
  double sum = 0.0;
  for (double v : x) sum += v;
  s.mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - s.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  s.variance = m2 / (n - 1.0);
  s.m3 = m3 / n;
  s.m4 = m4 / n;
  s.mean_se = std::sqrt(s.variance / n);
  s.variance_se = std::sqrt(std::max(0.0, (s.m4 - s.variance * s.variance) / n));
  return s;
}

/// Unbiased sample covariance.
inline double sample_covariance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InsufficientData("covariance needs paired samples");
  if (x.size() < 2) throw InsufficientData("at least two observations are required");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double c = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) c += (x[i] - mx) * (y[i] - my);
  return c / (n - 1.0);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

struct AndersonDarling {
  double statistic;           ///< A^2
  double adjusted_statistic;  ///< A^2 (1 + 0.75/n + 2.25/n^2)
  double p_value;
};

/// Anderson-Darling test of normality with mean and variance estimated from
/// the data; p-value from the D'Agostino-Stephens approximation.
inline AndersonDarling anderson_darling_normal(std::span<const double> data) {
  const auto s = summarize(data);
  if (!(s.variance > 0.0)) return {std::numeric_limits<double>::infinity(),
                                   std::numeric_limits<double>::infinity(), 0.0};
  std::vector<double> z(data.begin(), data.end());
  std::sort(z.begin(), z.end());
  const double sd = std::sqrt(s.variance);
  for (double& v : z) v = (v - s.mean) / sd;
  const std::size_t n = z.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = std::log(normal_cdf(z[i]));
    const double hi = std::log(normal_cdf(-z[n - 1 - i]));
    acc += (2.0 * static_cast<double>(i) + 1.0) * (lo + hi);
  }
  const double nn = static_cast<double>(n);
  const double a2 = -nn - acc / nn;
  const double a = a2 * (1.0 + 0.75 / nn + 2.25 / (nn * nn));
  double p;
  if (a >= 0.6) {
    p = std::exp(1.2937 - 5.709 * a + 0.0186 * a * a);
  } else if (a >= 0.34) {
    p = std::exp(0.9177 - 4.279 * a - 1.38 * a * a);
  } else if (a >= 0.2) {
    p = 1.0 - std::exp(-8.318 + 42.796 * a - 59.938 * a * a);
  } else {
    p = 1.0 - std::exp(-13.436 + 101.14 * a - 223.73 * a * a);
  }
  return {a2, a, std::clamp(p, 0.0, 1.0)};
}

struct KsResult {
  double statistic;
  double p_value;
};

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
inline KsResult ks_two_sample(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw InsufficientData("KS test needs two non-empty samples");
  std::vector<double> a(x.begin(), x.end()), b(y.begin(), y.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  const double lambda = (ne + 0.12 + 0.11 / ne) * d;
  double p = 0.0;
  if (lambda < 1e-3) {
    p = 1.0;
  } else {
    for (int k = 1; k <= 100; ++k) {
      const double term = std::exp(-2.0 * k * k * lambda * lambda);
      p += (k % 2 == 1 ? 2.0 : -2.0) * term;
      if (term < 1e-16) break;
    }
  }
  return {d, std::clamp(p, 0.0, 1.0)};
}

struct LinearFit {
  double slope;
  double intercept;
  double slope_se;
};

/// Weighted least squares y = intercept + slope x, weights = inverse variances.
inline LinearFit weighted_least_squares(std::span<const double> x, std::span<const double> y,
                                        std::span<const double> w) {
  if (x.size() != y.size() || x.size() != w.size() || x.size() < 2)
    throw InsufficientData("WLS needs at least two weighted points");
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  const double xm = sx / sw, ym = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - xm) * (x[i] - xm);
    sxy += w[i] * (x[i] - xm) * (y[i] - ym);
  }
  if (!(sxx > 0.0)) throw InsufficientData("WLS needs at least two distinct abscissae");
  const double slope = sxy / sxx;
  return {slope, ym - slope * xm, std::sqrt(1.0 / sxx)};
}

/// log of the mean of exp(values), and the relative standard error of that
/// mean; computed with a max shift so tiny weights do not underflow.
struct LogMean {
  double log_mean;
  double rel_err;
};

inline LogMean log_mean_exp(std::span<const double> log_values) {
  if (log_values.empty()) throw InsufficientData("no samples");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : log_values) top = std::max(top, v);
  if (!std::isfinite(top)) return {-std::numeric_limits<double>::infinity(),
                                   std::numeric_limits<double>::infinity()};
  const double n = static_cast<double>(log_values.size());
  double s1 = 0.0, s2 = 0.0;
  for (double v : log_values) {
    const double e = std::exp(v - top);
    s1 += e;
    s2 += e * e;
  }
  const double m = s1 / n;
  const double var = n > 1.0 ? std::max(0.0, (s2 - n * m * m) / (n - 1.0)) : 0.0;
  return {top + std::log(m), std::sqrt(var / n) / m};
}

}  // namespace coxq
