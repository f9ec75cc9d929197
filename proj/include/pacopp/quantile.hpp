#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pacopp/core.hpp"
#include "pacopp/io.hpp"
#include "pacopp/rejection.hpp"

namespace pacopp {

/// Check loss rho_q(u) = u q for u >= 0 and u (q - 1) otherwise.
inline double pinball_loss(double u, double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("pinball level must lie in (0,1)");
  return u >= 0.0 ? u * q : u * (q - 1.0);
}

enum class QuantileModelKind { affine, mlp };

struct QuantileTrainConfig {
  QuantileModelKind model_kind = QuantileModelKind::affine;
  std::size_t hidden_width = 32;
  double learning_rate = 0.05;
  std::size_t epochs = 1000;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (model_kind == QuantileModelKind::mlp && hidden_width < 1) throw std::invalid_argument("hidden_width must be >= 1");
  }
};

/// q(s) = intercept + <slopes, s>; with no slopes the function is constant.
struct AffineQuantile {
  double intercept = 0.0;
  std::vector<double> slopes;

  [[nodiscard]] double operator()(const Context& s) const {
    if (slopes.empty()) return intercept;
    if (s.dim() != slopes.size()) throw std::invalid_argument("context dimension mismatch");
    double acc = intercept;
    for (std::size_t j = 0; j < slopes.size(); ++j) acc += slopes[j] * s[j];
    return acc;
  }
};

/// One hidden layer of softplus units on standardized inputs.
struct MlpQuantile {
  std::vector<double> in_mean, in_scale;
  double out_mean = 0.0, out_scale = 1.0;
  std::size_t hidden = 0;
  std::vector<double> w1;  // hidden x dim, row major
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // hidden
  double b2 = 0.0;

  [[nodiscard]] double operator()(const Context& s) const {
    const std::size_t dim = in_mean.size();
    if (s.dim() != dim) throw std::invalid_argument("context dimension mismatch");
    double out = b2;
    for (std::size_t h = 0; h < hidden; ++h) {
      double a = b1[h];
      for (std::size_t j = 0; j < dim; ++j) a += w1[h * dim + j] * (s[j] - in_mean[j]) / in_scale[j];
      out += w2[h] * softplus(a);
    }
    return out_mean + out_scale * out;
  }

  static double softplus(double x) noexcept { return x > 30.0 ? x : std::log1p(std::exp(x)); }
  static double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }
};

using QuantileFunction = std::variant<AffineQuantile, MlpQuantile>;

inline double evaluate(const QuantileFunction& f, const Context& s) {
  return std::visit([&](const auto& g) { return g(s); }, f);
}

struct QuantileFit {
  QuantileFunction function;
  /// Mean pinball loss (standardized units) after each epoch; non-increasing.
  std::vector<double> loss_history;
};

namespace detail {

struct Standardizer {
  std::vector<double> in_mean, in_scale;
  double out_mean = 0.0, out_scale = 1.0;
};

inline Standardizer standardize(std::span<const TargetSample> data) {
  const std::size_t dim = data.front().context.dim();
  const double n = static_cast<double>(data.size());
  Standardizer st;
  st.in_mean.assign(dim, 0.0);
  st.in_scale.assign(dim, 0.0);
  for (const auto& x : data) {
    if (x.context.dim() != dim) throw std::invalid_argument("inconsistent context dimensions");
    for (std::size_t j = 0; j < dim; ++j) st.in_mean[j] += x.context[j] / n;
    st.out_mean += x.reward / n;
  }
  double out_var = 0.0;
  for (const auto& x : data) {
    for (std::size_t j = 0; j < dim; ++j) st.in_scale[j] += (x.context[j] - st.in_mean[j]) * (x.context[j] - st.in_mean[j]) / n;
    out_var += (x.reward - st.out_mean) * (x.reward - st.out_mean) / n;
  }
  for (auto& v : st.in_scale) v = v > 0.0 ? std::sqrt(v) : 1.0;
  st.out_scale = out_var > 0.0 ? std::sqrt(out_var) : 1.0;
  return st;
}

// Full-batch subgradient descent on a flat parameter vector. A step that
// increases the loss is rejected and the learning rate halved, so the
// recorded loss sequence is non-increasing.
template <class LossFn, class GradFn>
std::vector<double> descend(std::vector<double>& theta, double lr, std::size_t epochs, LossFn&& loss, GradFn&& grad) {
  std::vector<double> history;
  history.reserve(epochs);
  double current = loss(theta);
  std::vector<double> g(theta.size());
  std::vector<double> proposal(theta.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    grad(theta, g);
    for (std::size_t i = 0; i < theta.size(); ++i) proposal[i] = theta[i] - lr * g[i];
    const double next = loss(proposal);
    if (next <= current) {
      theta.swap(proposal);
      current = next;
    } else {
      lr *= 0.5;
    }
    history.push_back(current);
  }
  return history;
}

inline QuantileFit fit_affine(std::span<const TargetSample> data, double level, const QuantileTrainConfig& cfg) {
  const auto st = standardize(data);
  const std::size_t dim = st.in_mean.size();
  const std::size_t n = data.size();
  std::vector<double> z(n * dim);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) z[i * dim + j] = (data[i].context[j] - st.in_mean[j]) / st.in_scale[j];
    y[i] = (data[i].reward - st.out_mean) / st.out_scale;
  }
  auto predict = [&](const std::vector<double>& th, std::size_t i) {
    double f = th[0];
    for (std::size_t j = 0; j < dim; ++j) f += th[1 + j] * z[i * dim + j];
    return f;
  };
  auto loss = [&](const std::vector<double>& th) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += pinball_loss(y[i] - predict(th, i), level);
    return acc / static_cast<double>(n);
  };
  auto grad = [&](const std::vector<double>& th, std::vector<double>& g) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = y[i] - predict(th, i);
      const double d = u > 0.0 ? -level : (u < 0.0 ? 1.0 - level : 0.0);
      g[0] += d;
      for (std::size_t j = 0; j < dim; ++j) g[1 + j] += d * z[i * dim + j];
    }
    for (auto& v : g) v /= static_cast<double>(n);
  };
  std::vector<double> theta(1 + dim, 0.0);
  auto history = descend(theta, cfg.learning_rate, cfg.epochs, loss, grad);

  // Fold the standardization back into raw-unit coefficients.
  AffineQuantile out;
  out.slopes.resize(dim);
  out.intercept = st.out_mean + st.out_scale * theta[0];
  for (std::size_t j = 0; j < dim; ++j) {
    out.slopes[j] = st.out_scale * theta[1 + j] / st.in_scale[j];
    out.intercept -= out.slopes[j] * st.in_mean[j];
  }
  return {out, std::move(history)};
}

inline QuantileFit fit_mlp(std::span<const TargetSample> data, double level, const QuantileTrainConfig& cfg, Rng& rng) {
  const auto st = standardize(data);
  const std::size_t dim = st.in_mean.size();
  const std::size_t n = data.size();
  const std::size_t H = cfg.hidden_width;
  std::vector<double> z(n * dim);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) z[i * dim + j] = (data[i].context[j] - st.in_mean[j]) / st.in_scale[j];
    y[i] = (data[i].reward - st.out_mean) / st.out_scale;
  }
  // Layout: w1 [H*dim], b1 [H], w2 [H], b2.
  const std::size_t o_b1 = H * dim, o_w2 = o_b1 + H, o_b2 = o_w2 + H;
  std::vector<double> theta(o_b2 + 1, 0.0);
  const double r1 = 1.0 / std::sqrt(static_cast<double>(dim));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(H));
  for (std::size_t k = 0; k < H * dim; ++k) theta[k] = r1 * (2.0 * rng.uniform() - 1.0);
  for (std::size_t h = 0; h < H; ++h) theta[o_b1 + h] = r1 * (2.0 * rng.uniform() - 1.0);
  for (std::size_t h = 0; h < H; ++h) theta[o_w2 + h] = r2 * (2.0 * rng.uniform() - 1.0);

  std::vector<double> pre(H);
  auto forward = [&](const std::vector<double>& th, std::size_t i) {
    double f = th[o_b2];
    for (std::size_t h = 0; h < H; ++h) {
      double a = th[o_b1 + h];
      for (std::size_t j = 0; j < dim; ++j) a += th[h * dim + j] * z[i * dim + j];
      pre[h] = a;
      f += th[o_w2 + h] * MlpQuantile::softplus(a);
    }
    return f;
  };
  auto loss = [&](const std::vector<double>& th) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += pinball_loss(y[i] - forward(th, i), level);
    return acc / static_cast<double>(n);
  };
  auto grad = [&](const std::vector<double>& th, std::vector<double>& g) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = y[i] - forward(th, i);
      const double d = u > 0.0 ? -level : (u < 0.0 ? 1.0 - level : 0.0);
      if (d == 0.0) continue;
      g[o_b2] += d;
      for (std::size_t h = 0; h < H; ++h) {
        g[o_w2 + h] += d * MlpQuantile::softplus(pre[h]);
        const double back = d * th[o_w2 + h] * MlpQuantile::sigmoid(pre[h]);
        g[o_b1 + h] += back;
        for (std::size_t j = 0; j < dim; ++j) g[h * dim + j] += back * z[i * dim + j];
      }
    }
    for (auto& v : g) v /= static_cast<double>(n);
  };
  auto history = descend(theta, cfg.learning_rate, cfg.epochs, loss, grad);

  MlpQuantile out;
  out.in_mean = st.in_mean;
  out.in_scale = st.in_scale;
  out.out_mean = st.out_mean;
  out.out_scale = st.out_scale;
  out.hidden = H;
  out.w1.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(o_b1));
  out.b1.assign(theta.begin() + static_cast<std::ptrdiff_t>(o_b1), theta.begin() + static_cast<std::ptrdiff_t>(o_w2));
  out.w2.assign(theta.begin() + static_cast<std::ptrdiff_t>(o_w2), theta.begin() + static_cast<std::ptrdiff_t>(o_b2));
  out.b2 = theta[o_b2];
  return {out, std::move(history)};
}

}  // namespace detail

/// Fits one conditional quantile at `level` by minimising the mean pinball loss.
inline QuantileFit fit_quantile(std::span<const TargetSample> data, double level, const QuantileTrainConfig& cfg,
                                Rng& rng) {
  cfg.validate();
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("quantile level must lie in (0,1)");
  if (data.size() < 2) throw std::invalid_argument("insufficient training data");
  if (cfg.model_kind == QuantileModelKind::affine) return detail::fit_affine(data, level, cfg);
  return detail::fit_mlp(data, level, cfg, rng);
}

/// Lower and upper conditional quantile functions. Evaluation applies the
/// crossing fix: where q_lo(s) > q_up(s) both are replaced by their midpoint.
class QuantilePairModel {
 public:
  QuantilePairModel() = default;
  QuantilePairModel(QuantileFunction lo, QuantileFunction up, double eps_lo, double eps_up)
      : lo_(std::move(lo)), up_(std::move(up)), eps_lo_(eps_lo), eps_up_(eps_up) {}

  /// q_lo = q_up = 0 everywhere.
  static QuantilePairModel trivial(double eps_lo, double eps_up) {
    return QuantilePairModel(AffineQuantile{}, AffineQuantile{}, eps_lo, eps_up);
  }

  [[nodiscard]] std::pair<double, double> bounds(const Context& s) const {
    double lo = evaluate(lo_, s);
    double up = evaluate(up_, s);
    if (lo > up) lo = up = 0.5 * (lo + up);
    return {lo, up};
  }
  [[nodiscard]] double q_lo(const Context& s) const { return bounds(s).first; }
  [[nodiscard]] double q_up(const Context& s) const { return bounds(s).second; }

  [[nodiscard]] double eps_lo() const noexcept { return eps_lo_; }
  [[nodiscard]] double eps_up() const noexcept { return eps_up_; }
  [[nodiscard]] const QuantileFunction& lower() const noexcept { return lo_; }
  [[nodiscard]] const QuantileFunction& upper() const noexcept { return up_; }

 private:
  QuantileFunction lo_ = AffineQuantile{};
  QuantileFunction up_ = AffineQuantile{};
  double eps_lo_ = 0.1;
  double eps_up_ = 0.9;
};

/// Trains q_lo at params.eps_lo and q_up at params.eps_up on the accepted pairs.
inline QuantilePairModel fit_quantile_pair(std::span<const TargetSample> train, const QuantileTrainConfig& cfg,
                                           const PacParams& params, Rng& rng) {
  if (train.size() < 2) throw std::invalid_argument("insufficient training data");
  Rng lo_rng = rng.child(0);
  Rng up_rng = rng.child(1);
  auto lo = fit_quantile(train, params.eps_lo, cfg, lo_rng);
  auto up = fit_quantile(train, params.eps_up, cfg, up_rng);
  return QuantilePairModel(std::move(lo.function), std::move(up.function), params.eps_lo, params.eps_up);
}

inline QuantilePairModel fit_quantile_pair(const RsDataset& train, const QuantileTrainConfig& cfg,
                                           const PacParams& params, Rng& rng) {
  return fit_quantile_pair(std::span<const TargetSample>(train.pairs), cfg, params, rng);
}

// Text form: one token stream, whitespace separated, numbers in shortest
// round-trip decimal.

namespace detail {

inline void write_numbers(std::ostream& out, std::span<const double> xs) {
  for (double x : xs) out << ' ' << format_double(x);
}

inline double read_number(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw std::runtime_error("unexpected end of model text");
  double x = 0.0;
  if (!parse_double(tok, x)) throw std::runtime_error("malformed number in model text: " + tok);
  return x;
}

inline std::size_t read_count(std::istream& in) {
  const double x = read_number(in);
  if (x < 0 || x != std::floor(x) || x > 1e9) throw std::runtime_error("malformed count in model text");
  return static_cast<std::size_t>(x);
}

inline std::vector<double> read_numbers(std::istream& in, std::size_t count) {
  std::vector<double> out(count);
  for (auto& x : out) x = read_number(in);
  return out;
}

inline void expect_token(std::istream& in, const std::string& want) {
  std::string tok;
  if (!(in >> tok) || tok != want) throw std::runtime_error("expected '" + want + "' in model text, got '" + tok + "'");
}

}  // namespace detail

inline void write_quantile_function(std::ostream& out, const QuantileFunction& f) {
  if (const auto* a = std::get_if<AffineQuantile>(&f)) {
    out << "affine " << a->slopes.size() << ' ' << format_double(a->intercept);
    detail::write_numbers(out, a->slopes);
  } else {
    const auto& m = std::get<MlpQuantile>(f);
    out << "mlp " << m.in_mean.size() << ' ' << m.hidden;
    detail::write_numbers(out, m.in_mean);
    detail::write_numbers(out, m.in_scale);
    out << ' ' << format_double(m.out_mean) << ' ' << format_double(m.out_scale);
    detail::write_numbers(out, m.w1);
    detail::write_numbers(out, m.b1);
    detail::write_numbers(out, m.w2);
    out << ' ' << format_double(m.b2);
  }
  out << '\n';
}

inline QuantileFunction read_quantile_function(std::istream& in) {
  std::string kind;
  if (!(in >> kind)) throw std::runtime_error("unexpected end of model text");
  if (kind == "affine") {
    AffineQuantile a;
    const std::size_t dim = detail::read_count(in);
    a.intercept = detail::read_number(in);
    a.slopes = detail::read_numbers(in, dim);
    return a;
  }
  if (kind == "mlp") {
    MlpQuantile m;
    const std::size_t dim = detail::read_count(in);
    m.hidden = detail::read_count(in);
    m.in_mean = detail::read_numbers(in, dim);
    m.in_scale = detail::read_numbers(in, dim);
    m.out_mean = detail::read_number(in);
    m.out_scale = detail::read_number(in);
    m.w1 = detail::read_numbers(in, m.hidden * dim);
    m.b1 = detail::read_numbers(in, m.hidden);
    m.w2 = detail::read_numbers(in, m.hidden);
    m.b2 = detail::read_number(in);
    return m;
  }
  throw std::runtime_error("unknown quantile model kind: " + kind);
}

inline void write_quantile_pair(std::ostream& out, const QuantilePairModel& m) {
  out << "levels " << format_double(m.eps_lo()) << ' ' << format_double(m.eps_up()) << '\n';
  out << "lower ";
  write_quantile_function(out, m.lower());
  out << "upper ";
  write_quantile_function(out, m.upper());
}

inline QuantilePairModel read_quantile_pair(std::istream& in) {
  detail::expect_token(in, "levels");
  const double lo = detail::read_number(in);
  const double up = detail::read_number(in);
  detail::expect_token(in, "lower");
  auto f_lo = read_quantile_function(in);
  detail::expect_token(in, "upper");
  auto f_up = read_quantile_function(in);
  return QuantilePairModel(std::move(f_lo), std::move(f_up), lo, up);
}

}  // namespace pacopp
