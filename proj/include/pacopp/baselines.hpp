#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pacopp/behavior.hpp"
#include "pacopp/calibrate.hpp"
#include "pacopp/core.hpp"
#include "pacopp/quantile.hpp"
#include "pacopp/stats.hpp"

namespace pacopp {

/// Conditional Gaussian reward model R | s, a ~ N(mu(s, a), sigma^2) with an
/// affine mean and a constant standard deviation.
class RewardModelGaussian {
 public:
  RewardModelGaussian(double intercept, std::vector<double> context_slopes, double action_slope, double sigma)
      : intercept_(intercept), context_slopes_(std::move(context_slopes)), action_slope_(action_slope), sigma_(sigma) {
    if (!(sigma_ > 0.0)) throw std::invalid_argument("reward model sigma must be positive");
  }

  [[nodiscard]] double mu(const Context& s, double a) const {
    if (s.dim() != context_slopes_.size()) throw std::invalid_argument("context dimension mismatch");
    double m = intercept_ + action_slope_ * a;
    for (std::size_t j = 0; j < context_slopes_.size(); ++j) m += context_slopes_[j] * s[j];
    return m;
  }
  [[nodiscard]] double sigma(const Context&, double) const noexcept { return sigma_; }
  [[nodiscard]] double density(double r, const Context& s, double a) const {
    return stats::normal_pdf(r, mu(s, a), sigma_ * sigma_);
  }

  [[nodiscard]] double intercept() const noexcept { return intercept_; }
  [[nodiscard]] const std::vector<double>& context_slopes() const noexcept { return context_slopes_; }
  [[nodiscard]] double action_slope() const noexcept { return action_slope_; }
  [[nodiscard]] double sigma() const noexcept { return sigma_; }

 private:
  double intercept_;
  std::vector<double> context_slopes_;
  double action_slope_;
  double sigma_;
};

inline constexpr double kRewardSigmaFloor = 1e-3;

/// Maximum-likelihood Gaussian reward model (misspecified whenever the true
/// reward noise is not Gaussian). sigma is floored at 1e-3.
inline RewardModelGaussian fit_reward_model(const LoggedDataset& train) {
  if (train.size() < 2) throw std::invalid_argument("fit_reward_model needs at least two samples");
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  x.reserve(train.size());
  y.reserve(train.size());
  for (const auto& s : train.samples) {
    std::vector<double> row(s.context.values().begin(), s.context.values().end());
    row.push_back(s.action);
    x.push_back(std::move(row));
    y.push_back(s.reward);
  }
  auto fit = detail::fit_linear_gaussian(x, y);
  const double action_slope = fit.slopes.back();
  fit.slopes.pop_back();
  return RewardModelGaussian(fit.intercept, std::move(fit.slopes), action_slope,
                             std::max(std::sqrt(fit.variance), kRewardSigmaFloor));
}

struct CoppConfig {
  /// Monte Carlo action draws per policy and context.
  std::size_t mc_samples = 100;
  std::size_t grid_points = 400;
  /// Grid spans the calibration reward range widened by this fraction per side.
  double grid_margin = 0.25;

  void validate() const {
    if (mc_samples < 1) throw std::invalid_argument("COPP needs at least one Monte Carlo sample");
    if (grid_points < 2) throw std::invalid_argument("COPP grid needs at least two points");
    if (!(grid_margin >= 0.0)) throw std::invalid_argument("grid margin must be nonnegative");
  }
};

/// w_hat(s, r) = sum_i P_R(r | s, a_i^e) / sum_i P_R(r | s, a_i) for one
/// context, with a_i^e ~ pi_e(.|s) and a_i ~ pi_b_hat(.|s) drawn once and
/// reused for every r.
class CoppWeightKernel {
 public:
  CoppWeightKernel(const RewardModelGaussian& rm, const StochasticPolicy& pb_hat, const StochasticPolicy& pe,
                   const Context& s, std::size_t h, Rng& target_rng, Rng& behavior_rng) {
    if (h < 1) throw std::invalid_argument("h must be >= 1");
    target_.reserve(h);
    behavior_.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
      const double a = pe.sample(s, target_rng);
      target_.push_back({rm.mu(s, a), rm.sigma(s, a)});
    }
    for (std::size_t i = 0; i < h; ++i) {
      const double a = pb_hat.sample(s, behavior_rng);
      behavior_.push_back({rm.mu(s, a), rm.sigma(s, a)});
    }
  }

  /// Ratio at r; 0 when the denominator underflows, counted in zero_denominators().
  double operator()(double r) {
    double num = 0.0, den = 0.0;
    for (const auto& c : target_) num += stats::normal_pdf(r, c.mean, c.sd * c.sd);
    for (const auto& c : behavior_) den += stats::normal_pdf(r, c.mean, c.sd * c.sd);
    if (!(den > 0.0)) {
      ++zero_denominators_;
      return 0.0;
    }
    return num / den;
  }

  [[nodiscard]] std::size_t zero_denominators() const noexcept { return zero_denominators_; }

 private:
  struct Component {
    double mean, sd;
  };
  std::vector<Component> target_;
  std::vector<Component> behavior_;
  std::size_t zero_denominators_ = 0;
};

inline double copp_weight(const RewardModelGaussian& rm, const StochasticPolicy& pb_hat, const StochasticPolicy& pe,
                          const Context& s, double r, std::size_t h, Rng& target_rng, Rng& behavior_rng) {
  CoppWeightKernel k(rm, pb_hat, pe, s, h, target_rng, behavior_rng);
  return k(r);
}

/// Single-stream form: target and behavior draws come from two children of `rng`.
inline double copp_weight(const RewardModelGaussian& rm, const StochasticPolicy& pb_hat, const StochasticPolicy& pe,
                          const Context& s, double r, std::size_t h, Rng& rng) {
  Rng t = rng.child(0);
  Rng b = rng.child(1);
  rng.next_u64();
  return copp_weight(rm, pb_hat, pe, s, r, h, t, b);
}

/// Normalised weights p_1..p_n, p_{n+1} of the weighted score distribution
/// sum_i p_i delta_{tau_i} + p_{n+1} delta_{+inf}.
inline std::vector<double> copp_normalized_weights(std::span<const double> cal_weights, double test_weight) {
  const double total = std::accumulate(cal_weights.begin(), cal_weights.end(), 0.0) + test_weight;
  std::vector<double> p(cal_weights.begin(), cal_weights.end());
  p.push_back(test_weight);
  if (total > 0.0) {
    for (auto& v : p) v /= total;
  } else {
    std::fill(p.begin(), p.end(), 0.0);
    p.back() = 1.0;
  }
  return p;
}

/// Calibration scores sorted ascending with their weights' prefix sums, so
/// the 1 - eps quantile for any test weight is a binary search.
class CoppCalibration {
 public:
  CoppCalibration(std::vector<double> scores, std::vector<double> weights, double grid_lo, double grid_hi)
      : grid_lo_(grid_lo), grid_hi_(grid_hi) {
    if (scores.size() != weights.size()) throw std::invalid_argument("scores and weights differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    sorted_.reserve(scores.size());
    prefix_.reserve(scores.size());
    double acc = 0.0;
    for (std::size_t i : order) {
      acc += weights[i];
      sorted_.push_back(scores[i]);
      prefix_.push_back(acc);
    }
    total_ = acc;
    weights_ = std::move(weights);
  }

  /// 1 - eps quantile of the weighted distribution with test weight w.
  [[nodiscard]] double threshold(double epsilon, double test_weight) const {
    const double total = total_ + test_weight;
    if (!(total > 0.0)) return kInfinity;
    const double target = (1.0 - epsilon) * total * (1.0 - 1e-12);
    const auto it = std::lower_bound(prefix_.begin(), prefix_.end(), target);
    if (it == prefix_.end()) return kInfinity;
    // Equal scores share a CDF value: step to the last of the run.
    return sorted_[static_cast<std::size_t>(it - prefix_.begin())];
  }

  [[nodiscard]] std::size_t size() const noexcept { return sorted_.size(); }
  [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }
  [[nodiscard]] double grid_lo() const noexcept { return grid_lo_; }
  [[nodiscard]] double grid_hi() const noexcept { return grid_hi_; }

 private:
  std::vector<double> sorted_;
  std::vector<double> prefix_;
  std::vector<double> weights_;
  double total_ = 0.0;
  double grid_lo_, grid_hi_;
};

struct CoppInterval {
  PredictionInterval interval = PredictionInterval::empty();
  bool empty = true;
  /// Accepted grid points did not form one contiguous run.
  bool non_contiguous = false;
  std::size_t zero_denominators = 0;
};

/// Grid [lo, hi] = reward range widened by `margin` of its width on each side.
inline std::pair<double, double> copp_grid_range(std::span<const double> rewards, double margin) {
  if (rewards.empty()) throw std::invalid_argument("grid range needs rewards");
  const auto [mn, mx] = std::minmax_element(rewards.begin(), rewards.end());
  double width = *mx - *mn;
  if (!(width > 0.0)) width = 1.0;
  return {*mn - margin * width, *mx + margin * width};
}

/// Weighted split-CP interval at context s: the hull of grid rewards r with
/// nonconformity(s, r) <= 1 - eps quantile of the weighted scores, where the
/// test atom carries weight test_weight(r).
template <class TestWeight>
CoppInterval copp_interval(const CoppCalibration& cal, const QuantilePairModel& model, const Context& s, double epsilon,
                           std::size_t grid_points, TestWeight&& test_weight) {
  CoppInterval out;
  const auto [q_lo, q_up] = model.bounds(s);
  bool seen = false;
  bool gap_open = false;
  for (std::size_t j = 0; j < grid_points; ++j) {
    const double r = cal.grid_lo() + (cal.grid_hi() - cal.grid_lo()) * static_cast<double>(j) /
                                         static_cast<double>(grid_points - 1);
    const double score = std::max(q_lo - r, r - q_up);
    const bool include = score <= cal.threshold(epsilon, test_weight(r));
    if (include) {
      if (!seen) out.interval.lo = r;
      if (seen && gap_open) out.non_contiguous = true;
      out.interval.hi = r;
      seen = true;
      gap_open = false;
    } else if (seen) {
      gap_open = true;
    }
  }
  out.empty = !seen;
  if (out.empty) out.interval = PredictionInterval::empty();
  return out;
}

/// Fitted COPP state: behavior and reward models, quantiles trained on the
/// unweighted D1, and weighted calibration scores on D2.
struct CoppModel {
  QuantilePairModel quantiles;
  RewardModelGaussian reward_model;
  GaussianLinearPolicy behavior;
  GaussianLinearPolicy target;
  CoppCalibration calibration;
  CoppConfig cfg;
  std::size_t zero_denominators = 0;
};

/// Calibration weights and scores for a held-out set, each point with its
/// own Monte Carlo draws.
inline CoppCalibration copp_calibrate(const LoggedDataset& cal, const QuantilePairModel& model,
                                      const RewardModelGaussian& rm, const StochasticPolicy& pb_hat,
                                      const StochasticPolicy& pe, const CoppConfig& cfg, Rng& rng,
                                      std::size_t* zero_denominators = nullptr) {
  cfg.validate();
  if (cal.empty()) throw std::invalid_argument("COPP calibration set is empty");
  std::vector<double> scores, weights, rewards;
  scores.reserve(cal.size());
  weights.reserve(cal.size());
  rewards.reserve(cal.size());
  for (const auto& x : cal.samples) {
    Rng t = rng.child(2 * rng.draws());
    Rng b = rng.child(2 * rng.draws() + 1);
    rng.next_u64();
    CoppWeightKernel k(rm, pb_hat, pe, x.context, cfg.mc_samples, t, b);
    weights.push_back(k(x.reward));
    if (zero_denominators) *zero_denominators += k.zero_denominators();
    scores.push_back(nonconformity(model, x.context, x.reward));
    rewards.push_back(x.reward);
  }
  const auto [lo, hi] = copp_grid_range(rewards, cfg.grid_margin);
  return CoppCalibration(std::move(scores), std::move(weights), lo, hi);
}

/// COPP interval at s: recomputes w_hat(s, r) on the reward grid with fresh
/// action draws for this context.
inline CoppInterval copp_predict(const CoppCalibration& cal, const QuantilePairModel& model,
                                 const RewardModelGaussian& rm, const StochasticPolicy& pb_hat,
                                 const StochasticPolicy& pe, const Context& s, double epsilon, const CoppConfig& cfg,
                                 Rng& rng) {
  cfg.validate();
  if (cal.size() == 0) return {PredictionInterval::whole_line(), false, false, 0};
  Rng t = rng.child(0);
  Rng b = rng.child(1);
  rng.next_u64();
  CoppWeightKernel kernel(rm, pb_hat, pe, s, cfg.mc_samples, t, b);
  auto out = copp_interval(cal, model, s, epsilon, cfg.grid_points, [&](double r) { return kernel(r); });
  out.zero_denominators = kernel.zero_denominators();
  return out;
}

/// One-shot form over a raw calibration set; an empty set gives the whole line.
inline CoppInterval copp_predict(const LoggedDataset& cal, const QuantilePairModel& model,
                                 const RewardModelGaussian& rm, const StochasticPolicy& pb_hat,
                                 const StochasticPolicy& pe, const Context& s, double epsilon, const CoppConfig& cfg,
                                 Rng& rng) {
  if (cal.empty()) return {PredictionInterval::whole_line(), false, false, 0};
  Rng cal_rng = rng.child(0);
  Rng test_rng = rng.child(1);
  const auto calibration = copp_calibrate(cal, model, rm, pb_hat, pe, cfg, cal_rng);
  return copp_predict(calibration, model, rm, pb_hat, pe, s, epsilon, cfg, test_rng);
}

/// Full COPP fit: D1 trains pi_b_hat, the reward model and (unweighted)
/// quantiles; D2 calibrates.
inline std::optional<CoppModel> prepare_copp(const LoggedDataset& d, const GaussianLinearPolicy& pe,
                                             const PacParams& params, const CoppConfig& cfg,
                                             const QuantileTrainConfig& qcfg, double min_variance_margin, Rng& rng) {
  const auto halves = split_dataset(d, params.gamma);
  if (halves.train.size() < 2 || halves.cal.empty()) return std::nullopt;
  auto behavior = fit_gaussian_policy(halves.train, min_variance_margin, pe.variance()).policy;
  auto rm = fit_reward_model(halves.train);
  std::vector<TargetSample> train_pairs;
  train_pairs.reserve(halves.train.size());
  for (const auto& x : halves.train.samples) train_pairs.push_back({x.context, x.reward});
  Rng fit_rng = rng.child(0);
  Rng cal_rng = rng.child(1);
  auto quantiles = fit_quantile_pair(train_pairs, qcfg, params, fit_rng);
  std::size_t zero = 0;
  auto calibration = copp_calibrate(halves.cal, quantiles, rm, behavior, pe, cfg, cal_rng, &zero);
  return CoppModel{std::move(quantiles), std::move(rm), std::move(behavior), pe, std::move(calibration), cfg, zero};
}

/// COPP-RS interval: split-CP threshold at level 1 - eps on the scores.
inline PredictionInterval copp_rs_predict(const ScoreList& scores, const QuantilePairModel& model, const Context& s,
                                          double epsilon) {
  const double t = split_cp_threshold(scores, 1.0 - epsilon);
  if (t == kInfinity) return PredictionInterval::whole_line();
  const auto [lo, up] = model.bounds(s);
  return PredictionInterval::widened(lo, up, t);
}

/// COPP-RS as a predictor over a prepared rejection-sampling core.
inline CalibratedPredictor copp_rs_predictor(const CalibrationCore& core, const PacParams& params) {
  auto diag = core.diag;
  diag.k = -1;
  const double t = diag.trivial ? kInfinity : split_cp_threshold(core.scores, 1.0 - params.epsilon);
  return CalibratedPredictor(core.model, t, params, diag);
}

}  // namespace pacopp
