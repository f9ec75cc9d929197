#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pacopp/rng.hpp"
#include "pacopp/stats.hpp"

namespace pacopp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Observed context: a fixed-length vector of finite reals.
class Context {
 public:
  Context() = default;
  explicit Context(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
      if (!std::isfinite(v)) throw std::invalid_argument("context entries must be finite");
    }
  }
  Context(std::initializer_list<double> values) : Context(std::vector<double>(values)) {}

  static Context scalar(double s) { return Context({s}); }

  [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const Context&, const Context&) = default;

 private:
  std::vector<double> values_;
};

struct LoggedSample {
  Context context;
  double action = 0.0;
  double reward = 0.0;
};

/// Logged (context, action, reward) triples in collection order.
struct LoggedDataset {
  std::vector<LoggedSample> samples;

  [[nodiscard]] std::size_t size() const noexcept { return samples.size(); }
  [[nodiscard]] bool empty() const noexcept { return samples.empty(); }
};

/// A (context, reward) pair drawn from the target joint law.
struct TargetSample {
  Context context;
  double reward = 0.0;
};

/// Affine map from a context to a real: intercept + <slopes, s>.
struct AffineMap {
  double intercept = 0.0;
  std::vector<double> slopes;

  [[nodiscard]] double operator()(const Context& s) const {
    if (s.dim() != slopes.size()) throw std::invalid_argument("context dimension mismatch");
    double acc = intercept;
    for (std::size_t i = 0; i < slopes.size(); ++i) acc += slopes[i] * s[i];
    return acc;
  }

  friend bool operator==(const AffineMap&, const AffineMap&) = default;
};

/// Conditional density over a real action given a context.
class StochasticPolicy {
 public:
  virtual ~StochasticPolicy() = default;
  [[nodiscard]] virtual double density(const Context& s, double action) const = 0;
  [[nodiscard]] virtual double log_density(const Context& s, double action) const {
    return std::log(density(s, action));
  }
  virtual double sample(const Context& s, Rng& rng) const = 0;
};

/// A | s ~ N(mean(s), variance). The second parameter is a variance.
class GaussianLinearPolicy final : public StochasticPolicy {
 public:
  GaussianLinearPolicy(AffineMap mean, double variance) : mean_(std::move(mean)), variance_(variance) {
    if (!(variance_ > 0.0) || !std::isfinite(variance_)) {
      throw std::invalid_argument("policy variance must be positive and finite");
    }
  }

  /// One-dimensional context: mean = intercept + slope * s.
  static GaussianLinearPolicy scalar(double intercept, double slope, double variance) {
    return GaussianLinearPolicy(AffineMap{intercept, {slope}}, variance);
  }

  [[nodiscard]] double mean(const Context& s) const { return mean_(s); }
  [[nodiscard]] const AffineMap& mean_map() const noexcept { return mean_; }
  [[nodiscard]] double variance() const noexcept { return variance_; }

  [[nodiscard]] double density(const Context& s, double action) const override {
    return stats::normal_pdf(action, mean_(s), variance_);
  }
  [[nodiscard]] double log_density(const Context& s, double action) const override {
    return stats::normal_log_pdf(action, mean_(s), variance_);
  }
  double sample(const Context& s, Rng& rng) const override {
    return rng.normal(mean_(s), std::sqrt(variance_));
  }

  friend bool operator==(const GaussianLinearPolicy& a, const GaussianLinearPolicy& b) {
    return a.mean_ == b.mean_ && a.variance_ == b.variance_;
  }

 private:
  AffineMap mean_;
  double variance_;
};

/// PAC targets: miscoverage epsilon with confidence 1 - delta, quantile
/// levels eps_lo < eps_up with eps_up - eps_lo = 1 - epsilon, and the
/// calibration fraction gamma.
struct PacParams {
  double epsilon = 0.2;
  double delta = 0.1;
  double eps_lo = 0.1;
  double eps_up = 0.9;
  double gamma = 0.5;

  /// Quantile levels split the miscoverage evenly: (eps/2, 1 - eps/2).
  static PacParams symmetric(double epsilon, double delta, double gamma = 0.5) {
    PacParams p{epsilon, delta, epsilon / 2.0, 1.0 - epsilon / 2.0, gamma};
    p.validate();
    return p;
  }

  void validate() const {
    auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
    if (!open_unit(epsilon)) throw std::invalid_argument("epsilon must lie in (0,1)");
    if (!open_unit(delta)) throw std::invalid_argument("delta must lie in (0,1)");
    if (!open_unit(gamma)) throw std::invalid_argument("gamma must lie in (0,1)");
    if (!(eps_lo >= 0.0 && eps_lo < eps_up && eps_up <= 1.0)) {
      throw std::invalid_argument("quantile levels must satisfy 0 <= eps_lo < eps_up <= 1");
    }
    if (std::abs((eps_up - eps_lo) - (1.0 - epsilon)) > 1e-12) {
      throw std::invalid_argument("eps_up - eps_lo must equal 1 - epsilon");
    }
  }
};

/// Closed interval [lo, hi] over the extended reals. The empty set is a
/// distinguished sentinel (lo = +inf, hi = -inf); every other value has lo <= hi.
struct PredictionInterval {
  double lo = -kInfinity;
  double hi = kInfinity;

  static PredictionInterval whole_line() noexcept { return {-kInfinity, kInfinity}; }
  static PredictionInterval empty() noexcept { return {kInfinity, -kInfinity}; }

  static PredictionInterval closed(double lo, double hi) {
    if (std::isnan(lo) || std::isnan(hi) || lo > hi) throw std::invalid_argument("interval requires lo <= hi");
    return {lo, hi};
  }

  /// [lo - t, hi + t]; a negative t wider than half the band gives the empty set.
  static PredictionInterval widened(double lo, double hi, double t) {
    if (t == kInfinity) return whole_line();
    if (lo - t > hi + t) return empty();
    return closed(lo - t, hi + t);
  }

  [[nodiscard]] bool is_empty() const noexcept { return lo > hi; }
  [[nodiscard]] bool is_whole_line() const noexcept { return lo == -kInfinity && hi == kInfinity; }
  [[nodiscard]] bool is_bounded() const noexcept { return std::isfinite(lo) && std::isfinite(hi); }
  [[nodiscard]] bool contains(double r) const noexcept { return lo <= r && r <= hi; }

  /// 0 for the empty set, +inf when unbounded.
  [[nodiscard]] double length() const noexcept {
    if (is_empty()) return 0.0;
    return hi - lo;
  }

  friend bool operator==(const PredictionInterval&, const PredictionInterval&) = default;
};

/// ceil(gamma * n), snapping products that are integral up to rounding
/// (0.7 * 10 evaluates to 7.000000000000001 in binary floating point).
inline std::size_t calibration_count(std::size_t n, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
  const double x = gamma * static_cast<double>(n);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(x));
}

/// Splits a sequence into (prefix, tail) with |tail| = ceil(gamma * n).
/// Order is preserved within both halves.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_tail(std::span<const T> items, double gamma) {
  const std::size_t cal = calibration_count(items.size(), gamma);
  const auto cut = static_cast<std::ptrdiff_t>(items.size() - cal);
  return {std::vector<T>(items.begin(), items.begin() + cut), std::vector<T>(items.begin() + cut, items.end())};
}

struct DatasetSplit {
  LoggedDataset train;
  LoggedDataset cal;
};

/// Training prefix and calibration tail; the last ceil(gamma * n) samples calibrate.
inline DatasetSplit split_dataset(const LoggedDataset& d, double gamma) {
  auto [train, cal] = split_tail<LoggedSample>(d.samples, gamma);
  return {LoggedDataset{std::move(train)}, LoggedDataset{std::move(cal)}};
}

}  // namespace pacopp
