#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pacopp/calibrate.hpp"
#include "pacopp/core.hpp"
#include "pacopp/rejection.hpp"
#include "pacopp/stats.hpp"

namespace pacopp {

namespace detail {

struct LinearGaussianFit {
  double intercept = 0.0;
  std::vector<double> slopes;
  /// Maximum-likelihood residual variance (mean squared residual).
  double variance = 0.0;
};

// Affine mean with constant variance, by gradient descent on the profiled
// Gaussian likelihood: for fixed mean coefficients the variance MLE is the
// mean squared residual, so the mean follows the squared-error gradient.
// Features are standardized internally; the step is the inverse of a
// Gershgorin bound on the Hessian.
inline LinearGaussianFit fit_linear_gaussian(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                             std::size_t max_iter = 5000) {
  const std::size_t n = y.size();
  if (n < 2 || x.size() != n) throw std::invalid_argument("linear fit needs at least two rows");
  const std::size_t p = x.front().size();
  const double nd = static_cast<double>(n);
  std::vector<double> mu(p, 0.0), sd(p, 0.0);
  double ymu = 0.0, ysd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) mu[j] += x[i][j] / nd;
    ymu += y[i] / nd;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) sd[j] += (x[i][j] - mu[j]) * (x[i][j] - mu[j]) / nd;
    ysd += (y[i] - ymu) * (y[i] - ymu) / nd;
  }
  for (auto& v : sd) v = v > 0.0 ? std::sqrt(v) : 1.0;
  ysd = ysd > 0.0 ? std::sqrt(ysd) : 1.0;

  std::vector<double> z(n * p), t(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) z[i * p + j] = (x[i][j] - mu[j]) / sd[j];
    t[i] = (y[i] - ymu) / ysd;
  }
  // Hessian of the mean squared error is 2 * [1 0; 0 C] with C the feature
  // correlation matrix (constant columns have zero rows).
  double gersh = 1.0;
  for (std::size_t a = 0; a < p; ++a) {
    double row = 0.0;
    for (std::size_t b = 0; b < p; ++b) {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += z[i * p + a] * z[i * p + b] / nd;
      row += std::abs(c);
    }
    gersh = std::max(gersh, row);
  }
  const double step = 1.0 / (2.0 * gersh);

  std::vector<double> theta(p + 1, 0.0), g(p + 1);
  for (std::size_t it = 0; it < max_iter; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double f = theta[0];
      for (std::size_t j = 0; j < p; ++j) f += theta[1 + j] * z[i * p + j];
      const double r = 2.0 * (f - t[i]) / nd;
      g[0] += r;
      for (std::size_t j = 0; j < p; ++j) g[1 + j] += r * z[i * p + j];
    }
    double norm = 0.0;
    for (std::size_t j = 0; j <= p; ++j) {
      theta[j] -= step * g[j];
      norm = std::max(norm, std::abs(g[j]));
    }
    if (norm < 1e-15) break;
  }

  LinearGaussianFit out;
  out.slopes.resize(p);
  out.intercept = ymu + ysd * theta[0];
  for (std::size_t j = 0; j < p; ++j) {
    out.slopes[j] = ysd * theta[1 + j] / sd[j];
    out.intercept -= out.slopes[j] * mu[j];
  }
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = out.intercept;
    for (std::size_t j = 0; j < p; ++j) f += out.slopes[j] * x[i][j];
    rss += (y[i] - f) * (y[i] - f);
  }
  out.variance = rss / nd;
  return out;
}

}  // namespace detail

struct GaussianPolicyFit {
  GaussianLinearPolicy policy;
  /// The variance floor target_variance * (1 + margin) was applied.
  bool variance_clamped = false;
};

/// Affine-mean, constant-variance Gaussian behavior policy fitted by maximum
/// likelihood. The variance is clamped to at least
/// target_variance * (1 + min_variance_margin) so pi_e / pi_b stays bounded.
inline GaussianPolicyFit fit_gaussian_policy(const LoggedDataset& d1, double min_variance_margin, double target_variance) {
  if (d1.size() < 2) throw std::invalid_argument("fit_gaussian_policy needs at least two samples");
  if (!(min_variance_margin >= 0.0) || !(target_variance > 0.0)) throw std::invalid_argument("invalid variance clamp");
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  x.reserve(d1.size());
  y.reserve(d1.size());
  for (const auto& s : d1.samples) {
    x.emplace_back(s.context.values().begin(), s.context.values().end());
    y.push_back(s.action);
  }
  auto fit = detail::fit_linear_gaussian(x, y);
  const double floor = target_variance * (1.0 + min_variance_margin);
  const bool clamped = !(fit.variance >= floor);
  return {GaussianLinearPolicy(AffineMap{fit.intercept, std::move(fit.slopes)}, clamped ? floor : fit.variance), clamped};
}

/// Finite class of candidate behavior policies with a uniform bound B_Pi on
/// pi_e / pi over the probe grid.
struct FinitePolicyClass {
  std::vector<GaussianLinearPolicy> policies;
  double bound = 1.0;

  static FinitePolicyClass make(std::vector<GaussianLinearPolicy> policies, const GaussianLinearPolicy& target,
                                std::span<const Context> probes) {
    if (policies.empty()) throw std::invalid_argument("policy class must be non-empty");
    FinitePolicyClass c{std::move(policies), 1.0};
    for (const auto& p : c.policies) c.bound = std::max(c.bound, gaussian_ratio_bound(target, p, probes));
    return c;
  }
};

/// Index of the member maximising sum_i log pi(A_i | S_i); first wins ties.
inline std::size_t mle_policy_index(const FinitePolicyClass& cls, const LoggedDataset& d1) {
  if (cls.policies.empty()) throw std::invalid_argument("policy class must be non-empty");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  bool any_finite = false;
  for (std::size_t m = 0; m < cls.policies.size(); ++m) {
    double score = 0.0;
    for (const auto& x : d1.samples) {
      score += cls.policies[m].log_density(x.context, x.action);
      if (score == -std::numeric_limits<double>::infinity()) break;
    }
    if (std::isnan(score)) score = -std::numeric_limits<double>::infinity();
    if (score > -std::numeric_limits<double>::infinity()) any_finite = true;
    if (score > best_score) {
      best_score = score;
      best = m;
    }
  }
  if (!any_finite) throw std::domain_error("every policy in the class has zero likelihood");
  return best;
}

inline const GaussianLinearPolicy& mle_policy(const FinitePolicyClass& cls, const LoggedDataset& d1) {
  return cls.policies[mle_policy_index(cls, d1)];
}

struct WeightErrorReport {
  double delta_w_hat = 0.0;
  /// Monte Carlo standard error of delta_w_hat.
  double standard_error = 0.0;
  std::size_t mc_samples = 0;
};

/// Monte Carlo estimate of E |w_hat(S,A) - w(S,A)| with S ~ P_S, A ~ pi_b.
/// Needs the true behavior policy, so it only exists in synthetic experiments.
inline WeightErrorReport estimate_weight_error(const StochasticPolicy& pb_hat, const StochasticPolicy& pb_true,
                                               const StochasticPolicy& pe,
                                               const std::function<Context(Rng&)>& sample_context, std::size_t mc,
                                               Rng& rng) {
  if (mc < 1) throw std::invalid_argument("mc must be >= 1");
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < mc; ++i) {
    const Context s = sample_context(rng);
    const double a = pb_true.sample(s, rng);
    const double target = pe.density(s, a);
    const double w = target / pb_true.density(s, a);
    const double den_hat = pb_hat.density(s, a);
    const double w_hat = den_hat > 0.0 ? target / den_hat : (target > 0.0 ? kInfinity : 0.0);
    const double e = std::abs(w_hat - w);
    sum += e;
    sum_sq += e * e;
  }
  const double n = static_cast<double>(mc);
  const double mean = sum / n;
  const double var = mc > 1 ? std::max(sum_sq / n - mean * mean, 0.0) * n / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n), mc};
}

enum class BehaviorEstimator { gaussian, finite_class };

struct PolicyFitConfig {
  BehaviorEstimator estimator = BehaviorEstimator::gaussian;
  double min_variance_margin = 0.05;
  /// Candidate set for BehaviorEstimator::finite_class.
  std::optional<FinitePolicyClass> policy_class;
  /// Bypasses estimation and uses this policy as pi_b_hat.
  std::optional<GaussianLinearPolicy> fixed_behavior;
  /// Probe contexts for the weight bound; empty means [-10, 10] in 201 steps.
  std::vector<Context> probes;
};

struct UnknownBehaviorCore {
  CalibrationCore core;
  std::optional<GaussianLinearPolicy> behavior;
  bool variance_clamped = false;
  std::size_t selected_index = 0;
};

/// Split D into D1 (prefix) and D2 (last ceil(gamma n)), estimate pi_b on D1,
/// rejection-sample both halves with w_hat = pi_e / pi_b_hat, fit quantiles on
/// D1^rs and score D2^rs.
inline UnknownBehaviorCore prepare_unknown(const LoggedDataset& d, const GaussianLinearPolicy& pe, const PacParams& params,
                                           const PolicyFitConfig& pcfg, const QuantileTrainConfig& qcfg, Rng& rng) {
  params.validate();
  UnknownBehaviorCore out{CalibrationCore{QuantilePairModel::trivial(params.eps_lo, params.eps_up), {}, {}}, {}, false, 0};
  out.core.diag.n = d.size();
  const auto halves = split_dataset(d, params.gamma);

  if (pcfg.fixed_behavior) {
    out.behavior = *pcfg.fixed_behavior;
  } else if (pcfg.estimator == BehaviorEstimator::finite_class) {
    if (!pcfg.policy_class) throw std::invalid_argument("finite_class estimator needs a policy class");
    out.selected_index = mle_policy_index(*pcfg.policy_class, halves.train);
    out.behavior = pcfg.policy_class->policies[out.selected_index];
  } else if (halves.train.size() >= 2) {
    auto fit = fit_gaussian_policy(halves.train, pcfg.min_variance_margin, pe.variance());
    out.behavior = std::move(fit.policy);
    out.variance_clamped = fit.variance_clamped;
  }
  if (!out.behavior) {
    out.core.diag.trivial = true;
    return out;
  }

  const auto default_probes = default_probe_contexts();
  const std::span<const Context> probes = pcfg.probes.empty() ? std::span<const Context>(default_probes) : pcfg.probes;
  const double B = gaussian_ratio_bound(pe, *out.behavior, probes);
  const auto w = WeightFunction::ratio(std::make_shared<GaussianLinearPolicy>(pe),
                                       std::make_shared<GaussianLinearPolicy>(*out.behavior), B);
  Rng rs1 = rng.child(0);
  Rng rs2 = rng.child(1);
  Rng fit_rng = rng.child(2);
  const RsDataset train = rejection_sample(halves.train, w, rs1);
  const RsDataset cal = rejection_sample(halves.cal, w, rs2);

  auto& diag = out.core.diag;
  diag.bound_B = B;
  diag.n_rs = train.size() + cal.size();
  diag.m = cal.size();
  diag.violations = train.violations + cal.violations;
  if (train.size() < 2 || cal.empty()) {
    diag.trivial = true;
    return out;
  }
  out.core.model = fit_quantile_pair(train, qcfg, params, fit_rng);
  out.core.scores = score_pairs(out.core.model, cal.pairs);
  diag.ties = out.core.scores.has_ties();
  return out;
}

/// PAC off-policy prediction with an estimated behavior policy.
inline CalibratedPredictor pacopp_unknown(const LoggedDataset& d, const GaussianLinearPolicy& pe, const PacParams& params,
                                          const PolicyFitConfig& pcfg, const QuantileTrainConfig& qcfg, Rng& rng) {
  return pac_predictor(prepare_unknown(d, pe, params, pcfg, qcfg, rng).core, params);
}

}  // namespace pacopp
