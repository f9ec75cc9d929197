#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pacopp/core.hpp"
#include "pacopp/rng.hpp"
#include "pacopp/stats.hpp"

namespace pacopp {

/// Synthetic contextual bandit with scalar contexts:
///   S ~ N(0, context_variance)
///   behavior A | s ~ N(behavior_slope * s, behavior_variance)
///   target   A | s ~ N(target_slope * s, target_variance)
///   R | s, a ~ sum_k weight_k N(s + a, reward_variance_k)
/// All second parameters are variances.
struct SynthEnvSpec {
  double context_variance = 4.0;
  double behavior_slope = 0.25;
  double behavior_variance = 4.0;
  double target_slope = 0.25;
  double target_variance = 1.0;
  std::array<double, 2> mixture_weights{0.2, 0.8};
  std::array<double, 2> reward_variances{1.0, 16.0};

  void validate() const {
    if (std::abs(mixture_weights[0] + mixture_weights[1] - 1.0) > 1e-12 || mixture_weights[0] < 0.0 ||
        mixture_weights[1] < 0.0) {
      throw std::invalid_argument("mixture weights must be nonnegative and sum to 1");
    }
    for (double v : {context_variance, behavior_variance, target_variance, reward_variances[0], reward_variances[1]}) {
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("environment variances must be positive");
    }
  }
};

class SynthEnv {
 public:
  explicit SynthEnv(SynthEnvSpec spec = {}) : spec_(spec) { spec_.validate(); }

  [[nodiscard]] const SynthEnvSpec& spec() const noexcept { return spec_; }

  [[nodiscard]] GaussianLinearPolicy behavior_policy() const {
    return GaussianLinearPolicy::scalar(0.0, spec_.behavior_slope, spec_.behavior_variance);
  }
  [[nodiscard]] GaussianLinearPolicy target_policy() const {
    return GaussianLinearPolicy::scalar(0.0, spec_.target_slope, spec_.target_variance);
  }

  Context sample_context(Rng& rng) const { return Context::scalar(rng.normal(0.0, std::sqrt(spec_.context_variance))); }

  double sample_reward(const Context& s, double a, Rng& rng) const {
    const std::size_t k = rng.uniform() < spec_.mixture_weights[0] ? 0 : 1;
    return rng.normal(s[0] + a, std::sqrt(spec_.reward_variances[k]));
  }

  /// n i.i.d. triples under the behavior policy.
  [[nodiscard]] LoggedDataset sample_logged(std::size_t n, Rng& rng) const { return sample_logged_under(behavior_policy(), n, rng); }

  [[nodiscard]] LoggedDataset sample_logged_under(const StochasticPolicy& policy, std::size_t n, Rng& rng) const {
    LoggedDataset d;
    d.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      Context s = sample_context(rng);
      const double a = policy.sample(s, rng);
      const double r = sample_reward(s, a, rng);
      d.samples.push_back({std::move(s), a, r});
    }
    return d;
  }

  /// m draws of (S, R) with A ~ pi_e(.|S) marginalised out.
  [[nodiscard]] std::vector<TargetSample> sample_target(std::size_t m, Rng& rng) const {
    const auto pe = target_policy();
    std::vector<TargetSample> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      Context s = sample_context(rng);
      const double a = pe.sample(s, rng);
      const double r = sample_reward(s, a, rng);
      out.push_back({std::move(s), r});
    }
    return out;
  }

  /// Mean of R | s under the target policy: s + target_slope * s.
  [[nodiscard]] double target_reward_mean(const Context& s) const { return s[0] * (1.0 + spec_.target_slope); }

  /// Analytic CDF of R | s under the target policy: a Gaussian mixture with
  /// component variances reward_variance_k + target_variance.
  [[nodiscard]] double target_reward_cdf(const Context& s, double r) const {
    const double m = target_reward_mean(s);
    double acc = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      acc += spec_.mixture_weights[k] * stats::normal_cdf(r, m, spec_.reward_variances[k] + spec_.target_variance);
    }
    return acc;
  }

  /// q-quantile of R | s under the target policy, by bisection to 1e-8.
  [[nodiscard]] double oracle_quantile(const Context& s, double q) const {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("quantile level must lie in (0,1)");
    const double m = target_reward_mean(s);
    double lo = m - 40.0;
    double hi = m + 40.0;
    while (target_reward_cdf(s, lo) > q) lo -= 40.0;
    while (target_reward_cdf(s, hi) < q) hi += 40.0;
    while (hi - lo > 1e-9) {
      const double mid = 0.5 * (lo + hi);
      if (target_reward_cdf(s, mid) < q) lo = mid;
      else hi = mid;
    }
    return 0.5 * (lo + hi);
  }

  [[nodiscard]] PredictionInterval oracle_interval(const Context& s, double eps_lo, double eps_up) const {
    return PredictionInterval::closed(oracle_quantile(s, eps_lo), oracle_quantile(s, eps_up));
  }

  /// Mixture variance of R | s, a.
  [[nodiscard]] double reward_noise_variance() const {
    return spec_.mixture_weights[0] * spec_.reward_variances[0] + spec_.mixture_weights[1] * spec_.reward_variances[1];
  }

 private:
  SynthEnvSpec spec_;
};

/// Finite-sample constants of the two-sided miscoverage bounds.
struct TheoremConstants {
  double B = 1.0, gamma = 0.5, epsilon = 0.2, delta = 0.1, delta_eps = 0.05;
  double m0 = 0.0;
  double m1 = 0.0;
  /// Upper bound: P[L <= eps] < 1 - delta + C_upper / sqrt(n).
  double C_upper = 0.0;
  /// Band bound: P[eps - delta_eps < L <= eps] > 1 - delta - C_band / sqrt(n).
  double C_band = 0.0;
};

inline TheoremConstants theorem_constants(double B, double gamma, double epsilon, double delta, double delta_eps) {
  if (!(B >= 1.0)) throw std::invalid_argument("B must be >= 1");
  auto open_unit = [](double x) { return x > 0.0 && x < 1.0; };
  if (!open_unit(gamma) || !open_unit(epsilon) || !open_unit(delta)) {
    throw std::invalid_argument("gamma, epsilon and delta must lie in (0,1)");
  }
  if (!(delta_eps > 0.0 && delta_eps < epsilon)) throw std::invalid_argument("delta_eps must lie in (0, epsilon)");

  TheoremConstants c{B, gamma, epsilon, delta, delta_eps};
  c.m0 = std::log(delta) / std::log1p(-epsilon);
  c.m1 = std::max(c.m0, std::log(delta) / (-2.0 * delta_eps * delta_eps));
  c.C_upper = 7.0 * B / std::sqrt(gamma * epsilon * (1.0 - epsilon)) + std::sqrt(std::floor(c.m0 / gamma) * B) + B / 2.0;
  const double e1 = epsilon - delta_eps;
  c.C_band = 7.0 * B / std::sqrt(gamma * e1 * (1.0 - e1)) +
             (std::sqrt(-2.0 * std::log(delta)) + 1.0) * B / (2.0 * delta_eps * std::sqrt(gamma)) +
             (1.0 - delta) * (std::sqrt(std::floor(c.m1 / gamma) * B) + B / 2.0);
  return c;
}

/// Lebesgue measure of (a \ b) U (b \ a).
inline double symmetric_difference_measure(const PredictionInterval& a, const PredictionInterval& b) {
  if (a.is_empty()) return b.length();
  if (b.is_empty()) return a.length();
  const bool overlap = a.lo <= b.hi && b.lo <= a.hi;
  if (!overlap) return a.length() + b.length();
  auto gap = [](double x, double y) { return x == y ? 0.0 : std::abs(x - y); };
  return gap(a.lo, b.lo) + gap(a.hi, b.hi);
}

}  // namespace pacopp
