#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pacopp/core.hpp"

namespace pacopp {

/// Policy density ratio w(s,a) = pi_e(a|s) / pi_b(a|s) together with the
/// bound B used to turn it into an acceptance probability w / B.
class WeightFunction {
 public:
  using Eval = std::function<double(const Context&, double)>;

  WeightFunction(Eval eval, double bound_B) : eval_(std::move(eval)), bound_(bound_B) {
    if (!(bound_ >= 1.0) || !std::isfinite(bound_)) throw std::invalid_argument("weight bound B must be finite and >= 1");
  }

  /// Ratio of two policy densities, 0 where both vanish and +inf where only
  /// the denominator does.
  static WeightFunction ratio(std::shared_ptr<const StochasticPolicy> target,
                              std::shared_ptr<const StochasticPolicy> behavior, double bound_B) {
    return WeightFunction(
        [target = std::move(target), behavior = std::move(behavior)](const Context& s, double a) {
          const double num = target->density(s, a);
          const double den = behavior->density(s, a);
          if (den > 0.0) return num / den;
          return num > 0.0 ? kInfinity : 0.0;
        },
        bound_B);
  }

  [[nodiscard]] double operator()(const Context& s, double a) const { return eval_(s, a); }
  [[nodiscard]] double bound() const noexcept { return bound_; }

 private:
  Eval eval_;
  double bound_;
};

/// Supremum over (s, a) of N(a; mu_e(s), v_e) / N(a; mu_b(s), v_b), maximised
/// over the probe contexts. Per context the supremum is
/// sqrt(v_b / v_e) * exp((mu_e - mu_b)^2 / (2 (v_b - v_e))). When the means
/// differ at any probe the result is inflated by 1.1, since the true
/// supremum may be attained between or beyond the probes.
inline double gaussian_ratio_bound(const GaussianLinearPolicy& target, const GaussianLinearPolicy& behavior,
                                   std::span<const Context> probes) {
  if (probes.empty()) throw std::invalid_argument("gaussian_ratio_bound needs at least one probe context");
  const double ve = target.variance();
  const double vb = behavior.variance();
  bool means_differ = false;
  for (const auto& s : probes) means_differ = means_differ || target.mean(s) != behavior.mean(s);

  if (ve > vb || (ve == vb && means_differ)) throw std::domain_error("weight unbounded");
  if (ve == vb) return 1.0;

  double best = 0.0;
  for (const auto& s : probes) {
    const double d = target.mean(s) - behavior.mean(s);
    best = std::max(best, std::sqrt(vb / ve) * std::exp(d * d / (2.0 * (vb - ve))));
  }
  return means_differ ? 1.1 * best : best;
}

/// Evenly spaced scalar contexts on [lo, hi].
inline std::vector<Context> probe_grid(double lo, double hi, std::size_t count) {
  if (count < 2 || !(lo < hi)) throw std::invalid_argument("probe grid needs count >= 2 and lo < hi");
  std::vector<Context> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(Context::scalar(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1)));
  }
  return out;
}

/// Accepted (context, reward) pairs in original index order.
struct RsDataset {
  std::vector<TargetSample> pairs;
  std::vector<std::size_t> source_index;
  /// Samples whose w / B exceeded 1 and were clamped.
  std::size_t violations = 0;

  [[nodiscard]] std::size_t size() const noexcept { return pairs.size(); }
  [[nodiscard]] bool empty() const noexcept { return pairs.empty(); }
};

/// Keeps sample i iff V_i <= w(S_i, A_i) / B, with V_i ~ U[0,1) drawn from
/// `rng` in index order (one draw per sample, accepted or not).
inline RsDataset rejection_sample(const LoggedDataset& d, const WeightFunction& w, Rng& rng) {
  RsDataset out;
  out.pairs.reserve(d.size() / 2 + 1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& x = d.samples[i];
    const double v = rng.uniform();
    double accept = w(x.context, x.action) / w.bound();
    if (std::isnan(accept)) accept = 0.0;
    if (accept > 1.0) {
      ++out.violations;
      accept = 1.0;
    }
    if (v <= accept && accept > 0.0) {
      out.pairs.push_back({x.context, x.reward});
      out.source_index.push_back(i);
    }
  }
  return out;
}

/// Tail split of a rejection-sampled set; see split_dataset.
inline std::pair<RsDataset, RsDataset> split_dataset(const RsDataset& d, double gamma) {
  const std::size_t cal = calibration_count(d.size(), gamma);
  const std::size_t cut = d.size() - cal;
  RsDataset train;
  RsDataset calib;
  train.pairs.assign(d.pairs.begin(), d.pairs.begin() + static_cast<std::ptrdiff_t>(cut));
  train.source_index.assign(d.source_index.begin(), d.source_index.begin() + static_cast<std::ptrdiff_t>(cut));
  calib.pairs.assign(d.pairs.begin() + static_cast<std::ptrdiff_t>(cut), d.pairs.end());
  calib.source_index.assign(d.source_index.begin() + static_cast<std::ptrdiff_t>(cut), d.source_index.end());
  train.violations = d.violations;
  calib.violations = d.violations;
  return {std::move(train), std::move(calib)};
}

}  // namespace pacopp
