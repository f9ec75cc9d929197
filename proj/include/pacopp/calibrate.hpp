#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pacopp/core.hpp"
#include "pacopp/io.hpp"
#include "pacopp/quantile.hpp"
#include "pacopp/rejection.hpp"

namespace pacopp {

/// Largest k in {-1, ..., M-1} with F_Bin(M, epsilon)(k) <= delta.
///
/// The CDF is accumulated term by term in log space (long double). A
/// comparison is treated as "<=" when log F exceeds log delta by at most
/// 1e-12, so exact ties such as F = delta are not lost to rounding.
inline int binomial_quantile_k(std::size_t M, double epsilon, double delta) {
  if (!(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("epsilon and delta must lie in (0,1)");
  }
  if (M == 0) return -1;
  const long double m = static_cast<long double>(M);
  const long double log_eps = std::log(static_cast<long double>(epsilon));
  const long double log_1m_eps = std::log1p(-static_cast<long double>(epsilon));
  const long double log_delta = std::log(static_cast<long double>(delta));
  const long double lg_m = std::lgamma(m + 1.0L);
  long double log_cdf = -std::numeric_limits<long double>::infinity();
  int k = -1;
  for (std::size_t i = 0; i < M; ++i) {
    const long double li = static_cast<long double>(i);
    const long double log_pmf =
        lg_m - std::lgamma(li + 1.0L) - std::lgamma(m - li + 1.0L) + li * log_eps + (m - li) * log_1m_eps;
    const long double hi = std::max(log_cdf, log_pmf);
    const long double lo = std::min(log_cdf, log_pmf);
    log_cdf = hi + std::log1p(std::exp(lo - hi));
    if (log_cdf > log_delta + 1e-12L) break;
    k = static_cast<int>(i);
  }
  return k;
}

/// Non-conformity of (s, r): how far r falls outside [q_lo(s), q_up(s)];
/// negative strictly inside.
inline double nonconformity(const QuantilePairModel& model, const Context& s, double r) {
  const auto [lo, up] = model.bounds(s);
  return std::max(lo - r, r - up);
}

/// Scores in original calibration order.
struct ScoreList {
  std::vector<double> scores;

  [[nodiscard]] std::size_t size() const noexcept { return scores.size(); }
  [[nodiscard]] bool has_ties() const {
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
  }
};

inline ScoreList score_pairs(const QuantilePairModel& model, std::span<const TargetSample> cal) {
  ScoreList out;
  out.scores.reserve(cal.size());
  for (const auto& x : cal) {
    const double t = nonconformity(model, x.context, x.reward);
    if (!std::isfinite(t)) throw std::domain_error("non-finite non-conformity score");
    out.scores.push_back(t);
  }
  return out;
}

namespace detail {

// j-th smallest (1-based) of the scores, +inf for j = M + 1.
inline double order_statistic(std::span<const double> scores, std::size_t j) {
  if (j == 0) throw std::invalid_argument("order statistics are 1-based");
  if (j > scores.size()) return kInfinity;
  std::vector<double> v(scores.begin(), scores.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(j - 1), v.end());
  return v[j - 1];
}

}  // namespace detail

/// tau_(M - k) with k = binomial_quantile_k(M, epsilon, delta); +inf when k = -1.
inline double pac_threshold(const ScoreList& s, double epsilon, double delta) {
  const int k = binomial_quantile_k(s.size(), epsilon, delta);
  if (k < 0) return kInfinity;
  return detail::order_statistic(s.scores, s.size() - static_cast<std::size_t>(k));
}

/// ceil(level * (M + 1))-th smallest of {tau_1, ..., tau_M, +inf}.
inline double split_cp_threshold(const ScoreList& s, double level) {
  if (!(level > 0.0 && level <= 1.0)) throw std::invalid_argument("split-CP level must lie in (0,1]");
  const double x = level * static_cast<double>(s.size() + 1);
  const double nearest = std::round(x);
  const double rank = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
  return detail::order_statistic(s.scores, static_cast<std::size_t>(std::max(rank, 1.0)));
}

/// Split-CP level 1 - eps + sqrt(-log(delta) / (2M)) that makes a marginal
/// interval (eps, delta)-PAC; values above 1 mean split CP cannot deliver it.
inline double pac_inflated_split_level(double epsilon, double delta, std::size_t M) {
  if (M == 0) return kInfinity;
  return 1.0 - epsilon + std::sqrt(-std::log(delta) / (2.0 * static_cast<double>(M)));
}

/// Smallest M with an inflated split-CP level <= 1.
inline std::size_t split_cp_min_calibration(double epsilon, double delta) {
  return static_cast<std::size_t>(std::ceil(-std::log(delta) / (2.0 * epsilon * epsilon)));
}

struct CalibrationDiagnostics {
  std::size_t n = 0;
  std::size_t n_rs = 0;
  std::size_t m = 0;
  int k = -1;
  std::size_t violations = 0;
  bool ties = false;
  /// Training or calibration set too small; quantiles are zero and tau = +inf.
  bool trivial = false;
  double bound_B = 1.0;
};

/// Quantile pair plus the PAC threshold.
class CalibratedPredictor {
 public:
  CalibratedPredictor(QuantilePairModel model, double threshold, PacParams params, CalibrationDiagnostics diag)
      : model_(std::move(model)), threshold_(threshold), params_(params), diag_(diag) {
    if (std::isnan(threshold_) || threshold_ == -kInfinity) throw std::invalid_argument("threshold must be finite or +inf");
  }

  /// [q_lo(s) - tau, q_up(s) + tau]; the whole line when tau = +inf.
  [[nodiscard]] PredictionInterval predict(const Context& s) const {
    if (threshold_ == kInfinity) return PredictionInterval::whole_line();
    const auto [lo, up] = model_.bounds(s);
    return PredictionInterval::widened(lo, up, threshold_);
  }

  [[nodiscard]] bool covers(const Context& s, double r) const { return nonconformity(model_, s, r) <= threshold_; }

  [[nodiscard]] const QuantilePairModel& model() const noexcept { return model_; }
  [[nodiscard]] double threshold() const noexcept { return threshold_; }
  [[nodiscard]] const PacParams& params() const noexcept { return params_; }
  [[nodiscard]] const CalibrationDiagnostics& diagnostics() const noexcept { return diag_; }

 private:
  QuantilePairModel model_;
  double threshold_;
  PacParams params_;
  CalibrationDiagnostics diag_;
};

inline PredictionInterval predict(const CalibratedPredictor& p, const Context& s) { return p.predict(s); }

/// Fitted quantiles and calibration scores, before a threshold rule is applied.
struct CalibrationCore {
  QuantilePairModel model;
  ScoreList scores;
  CalibrationDiagnostics diag;
};

/// Splits the accepted pairs, fits quantiles on the prefix and scores the tail.
inline CalibrationCore prepare_calibration(const RsDataset& rs, const PacParams& params, const QuantileTrainConfig& qcfg,
                                           Rng& rng) {
  const auto split = split_dataset(rs, params.gamma);
  const RsDataset& train = split.first;
  const RsDataset& cal = split.second;
  CalibrationCore core{QuantilePairModel::trivial(params.eps_lo, params.eps_up), {}, {}};
  core.diag.n_rs = rs.size();
  core.diag.violations = rs.violations;
  core.diag.m = cal.size();
  if (train.size() < 2 || cal.empty()) {
    core.diag.trivial = true;
    return core;
  }
  core.model = fit_quantile_pair(train, qcfg, params, rng);
  core.scores = score_pairs(core.model, cal.pairs);
  core.diag.ties = core.scores.has_ties();
  return core;
}

/// Applies the PAC threshold to a prepared core.
inline CalibratedPredictor pac_predictor(const CalibrationCore& core, const PacParams& params) {
  auto diag = core.diag;
  if (diag.trivial) {
    diag.k = -1;
    return CalibratedPredictor(core.model, kInfinity, params, diag);
  }
  diag.k = binomial_quantile_k(core.scores.size(), params.epsilon, params.delta);
  return CalibratedPredictor(core.model, pac_threshold(core.scores, params.epsilon, params.delta), params, diag);
}

inline std::vector<Context> default_probe_contexts() { return probe_grid(-10.0, 10.0, 201); }

/// PAC off-policy prediction with a known behavior policy: rejection-sample
/// with w = pi_e / pi_b, split, fit quantiles, calibrate with the binomial cutoff.
inline CalibratedPredictor pacopp_known(const LoggedDataset& d, const WeightFunction& w, const PacParams& params,
                                        const QuantileTrainConfig& qcfg, Rng& rng) {
  params.validate();
  Rng rs_rng = rng.child(0);
  Rng fit_rng = rng.child(1);
  const RsDataset rs = rejection_sample(d, w, rs_rng);
  auto core = prepare_calibration(rs, params, qcfg, fit_rng);
  core.diag.n = d.size();
  core.diag.bound_B = w.bound();
  return pac_predictor(core, params);
}

inline CalibratedPredictor pacopp_known(const LoggedDataset& d, const GaussianLinearPolicy& behavior,
                                        const GaussianLinearPolicy& target, const PacParams& params,
                                        const QuantileTrainConfig& qcfg, Rng& rng,
                                        std::span<const Context> probes = {}) {
  const auto default_probes = default_probe_contexts();
  if (probes.empty()) probes = default_probes;
  const double B = gaussian_ratio_bound(target, behavior, probes);
  const auto w = WeightFunction::ratio(std::make_shared<GaussianLinearPolicy>(target),
                                       std::make_shared<GaussianLinearPolicy>(behavior), B);
  return pacopp_known(d, w, params, qcfg, rng);
}

/// Text dump of a predictor; numbers round-trip exactly.
inline void write_predictor(std::ostream& out, const CalibratedPredictor& p) {
  const auto& pr = p.params();
  const auto& d = p.diagnostics();
  out << "pacopp-predictor 1\n";
  out << "threshold " << format_double(p.threshold()) << '\n';
  out << "params " << format_double(pr.epsilon) << ' ' << format_double(pr.delta) << ' ' << format_double(pr.eps_lo)
      << ' ' << format_double(pr.eps_up) << ' ' << format_double(pr.gamma) << '\n';
  out << "diagnostics " << d.n << ' ' << d.n_rs << ' ' << d.m << ' ' << d.k << ' ' << d.violations << ' '
      << (d.ties ? 1 : 0) << ' ' << (d.trivial ? 1 : 0) << ' ' << format_double(d.bound_B) << '\n';
  write_quantile_pair(out, p.model());
}

inline CalibratedPredictor read_predictor(std::istream& in) {
  detail::expect_token(in, "pacopp-predictor");
  detail::expect_token(in, "1");
  detail::expect_token(in, "threshold");
  const double tau = detail::read_number(in);
  detail::expect_token(in, "params");
  PacParams pr;
  pr.epsilon = detail::read_number(in);
  pr.delta = detail::read_number(in);
  pr.eps_lo = detail::read_number(in);
  pr.eps_up = detail::read_number(in);
  pr.gamma = detail::read_number(in);
  pr.validate();
  detail::expect_token(in, "diagnostics");
  CalibrationDiagnostics d;
  d.n = detail::read_count(in);
  d.n_rs = detail::read_count(in);
  d.m = detail::read_count(in);
  d.k = static_cast<int>(detail::read_number(in));
  d.violations = detail::read_count(in);
  d.ties = detail::read_count(in) != 0;
  d.trivial = detail::read_count(in) != 0;
  d.bound_B = detail::read_number(in);
  auto model = read_quantile_pair(in);
  return CalibratedPredictor(std::move(model), tau, pr, d);
}

}  // namespace pacopp
