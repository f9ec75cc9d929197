#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace pacopp::stats {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double normal_pdf(double x, double mean, double variance) noexcept {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

inline double normal_log_pdf(double x, double mean, double variance) noexcept {
  const double z = x - mean;
  return -0.5 * z * z / variance - 0.5 * std::log(2.0 * std::numbers::pi * variance);
}

inline double normal_cdf(double x, double mean, double variance) noexcept {
  return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * variance));
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty sample");
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> xs) {
  if (xs.size() < 2) throw std::invalid_argument("variance needs at least two values");
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size() - 1);
}

/// Linear-interpolated empirical quantile (type 7), used for reporting only.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return xs[lo];
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

/// Survival function of the Kolmogorov distribution, P[K > x].
inline double kolmogorov_survival(double x) noexcept {
  if (x <= 0.0) return 1.0;
  if (x < 0.3) return 1.0;  // series is numerically 1 here
  double sum = 0.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = std::exp(-2.0 * j * j * x * x);
    sum += (j % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test, asymptotic p-value with the
/// Stephens small-sample correction.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("KS test needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d)};
}

/// One-sample KS test against a continuous CDF.
template <class Cdf>
KsResult ks_one_sample(std::vector<double> xs, Cdf&& cdf) {
  if (xs.empty()) throw std::invalid_argument("KS test needs a non-empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double ne = std::sqrt(n);
  return {d, kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d)};
}

/// Monte Carlo standard error of a frequency estimate.
inline double binomial_stderr(double p, std::size_t runs) {
  if (runs == 0) return 0.0;
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(runs));
}

}  // namespace pacopp::stats
