#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pacopp/baselines.hpp"
#include "pacopp/behavior.hpp"
#include "pacopp/calibrate.hpp"
#include "pacopp/core.hpp"
#include "pacopp/io.hpp"
#include "pacopp/rng.hpp"
#include "pacopp/stats.hpp"
#include "pacopp/synthenv.hpp"

namespace pacopp {

struct TestMetrics {
  double miscoverage = 0.0;
  /// Mean interval length; +inf if any interval is unbounded.
  double mean_length = 0.0;
};

template <class PredictFn>
TestMetrics evaluate_predictions(PredictFn&& predict_fn, std::span<const TargetSample> test) {
  if (test.empty()) throw std::invalid_argument("test set is empty");
  std::size_t misses = 0;
  double length = 0.0;
  for (const auto& x : test) {
    const PredictionInterval c = predict_fn(x.context);
    if (!c.contains(x.reward)) ++misses;
    length += c.length();
  }
  const double n = static_cast<double>(test.size());
  return {static_cast<double>(misses) / n, length / n};
}

/// Fraction of test points whose reward falls outside the predicted closed interval.
template <class PredictFn>
double evaluate_miscoverage(PredictFn&& predict_fn, std::span<const TargetSample> test) {
  return evaluate_predictions(std::forward<PredictFn>(predict_fn), test).miscoverage;
}

struct TrialReport {
  std::string method;
  std::size_t seed = 0;
  std::size_t n = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  double miscoverage = 0.0;
  double mean_length = 0.0;
  bool trivial = false;
  double threshold = 0.0;
  CalibrationDiagnostics diag;
  std::optional<double> delta_w_hat;

  [[nodiscard]] double coverage() const noexcept { return 1.0 - miscoverage; }
};

struct AggregateRow {
  std::string method;
  std::size_t n = 0;
  double delta = 0.0;
  double delta_eps = 0.0;
  std::size_t runs = 0;
  double pac_freq = 0.0;
  double pac_stderr = 0.0;
  double band_freq = 0.0;
  double band_stderr = 0.0;
  double coverage_mean = 0.0;
  double coverage_q10 = 0.0;
  double coverage_q50 = 0.0;
  double coverage_q90 = 0.0;
  /// Over runs with finite length; NaN when every run was trivial.
  double length_mean = 0.0;
  double length_q50 = 0.0;
  std::size_t trivial_runs = 0;
};

struct AggregateTable {
  std::vector<AggregateRow> rows;
  std::vector<TrialReport> trials;

  [[nodiscard]] const AggregateRow* find(const std::string& method, std::size_t n, double delta, double delta_eps) const {
    for (const auto& r : rows) {
      if (r.method == method && r.n == n && r.delta == delta && r.delta_eps == delta_eps) return &r;
    }
    return nullptr;
  }
};

/// Row over `trials` for the PAC event L <= epsilon and the band
/// epsilon - delta_eps < L <= epsilon.
inline AggregateRow aggregate(std::span<const TrialReport> trials, const std::string& method, std::size_t n,
                              double epsilon, double delta, double delta_eps) {
  AggregateRow row{method, n, delta, delta_eps};
  row.runs = trials.size();
  if (trials.empty()) return row;
  std::size_t pac = 0, band = 0;
  std::vector<double> cov, len;
  for (const auto& t : trials) {
    if (t.miscoverage <= epsilon) {
      ++pac;
      if (t.miscoverage > epsilon - delta_eps) ++band;
    }
    cov.push_back(t.coverage());
    if (t.trivial || !std::isfinite(t.mean_length)) ++row.trivial_runs;
    else len.push_back(t.mean_length);
  }
  const double runs = static_cast<double>(trials.size());
  row.pac_freq = static_cast<double>(pac) / runs;
  row.band_freq = static_cast<double>(band) / runs;
  row.pac_stderr = stats::binomial_stderr(row.pac_freq, trials.size());
  row.band_stderr = stats::binomial_stderr(row.band_freq, trials.size());
  row.coverage_mean = stats::mean(cov);
  row.coverage_q10 = stats::quantile(cov, 0.1);
  row.coverage_q50 = stats::quantile(cov, 0.5);
  row.coverage_q90 = stats::quantile(cov, 0.9);
  if (len.empty()) {
    row.length_mean = row.length_q50 = std::numeric_limits<double>::quiet_NaN();
  } else {
    row.length_mean = stats::mean(len);
    row.length_q50 = stats::quantile(len, 0.5);
  }
  return row;
}

/// Runs fn(0..count-1) on a worker pool; results are indexed by trial, so
/// the output does not depend on scheduling. The first exception is rethrown.
template <class Fn>
auto parallel_trials(std::size_t count, std::size_t threads, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using T = decltype(fn(std::size_t{}));
  std::vector<std::optional<T>> slots(count);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  std::vector<T> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct BenchConfig {
  std::size_t runs = 500;
  std::size_t tests = 10000;
  /// COPP recomputes weights on a reward grid per test point, so it is
  /// evaluated on fewer test points.
  std::size_t copp_tests = 200;
  std::size_t n = 2000;
  double epsilon = 0.2;
  double delta = 0.1;
  double gamma = 0.5;
  std::vector<std::size_t> n_grid{500, 1000, 2000, 4000};
  std::vector<double> delta_eps_grid{0.05, 0.1, 1.0};
  std::vector<double> figure2_deltas{0.5, 0.25, 0.1, 0.01};
  std::vector<std::size_t> theorem4_n{500, 2000, 8000};
  std::size_t theorem4_runs = 50;
  std::size_t theorem4_tests = 200;
  /// Mean offsets of the finite behavior class around the true behavior mean.
  std::vector<double> class_offsets{-0.5, -0.25, 0.0, 0.25, 0.5};
  double class_delta0 = 0.1;
  std::size_t weight_error_mc = 100000;
  double min_variance_margin = 0.05;
  std::size_t threads = 0;
  QuantileTrainConfig quantile;
  CoppConfig copp;
  SynthEnvSpec env;

  [[nodiscard]] PacParams params(double delta_value) const { return PacParams::symmetric(epsilon, delta_value, gamma); }
  [[nodiscard]] PacParams params() const { return params(delta); }

  void validate() const {
    if (runs < 1) throw std::invalid_argument("runs must be >= 1");
    if (tests < 1 || copp_tests < 1 || theorem4_tests < 1) throw std::invalid_argument("test counts must be >= 1");
    if (theorem4_runs < 1) throw std::invalid_argument("theorem4_runs must be >= 1");
    params().validate();
    for (double d : figure2_deltas) params(d).validate();
    if (n_grid.empty() || delta_eps_grid.empty() || figure2_deltas.empty() || theorem4_n.empty()) {
      throw std::invalid_argument("grids must be non-empty");
    }
    for (double de : delta_eps_grid) {
      if (!(de > 0.0)) throw std::invalid_argument("delta_eps values must be positive");
    }
    if (class_offsets.empty()) throw std::invalid_argument("class_offsets must be non-empty");
    if (!(class_delta0 > 0.0 && class_delta0 < 1.0)) throw std::invalid_argument("class_delta0 must lie in (0,1)");
    if (weight_error_mc < 1) throw std::invalid_argument("weight_error_mc must be >= 1");
    quantile.validate();
    copp.validate();
    env.validate();
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  double x = 0.0;
  if (!parse_double(value, x)) throw std::invalid_argument("invalid value for " + key + ": " + value);
  if constexpr (std::is_integral_v<T>) {
    if (x < 0.0 || x != std::floor(x) || x > 1e15) {
      throw std::invalid_argument("expected a nonnegative integer for " + key + ": " + value);
    }
    return static_cast<T>(x);
  } else {
    return x;
  }
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  for (auto field : split_fields(value, ',')) out.push_back(parse_number<T>(key, std::string(trim(field))));
  return out;
}

}  // namespace detail

/// Applies one key=value setting. Unknown keys are an error.
inline void apply_setting(BenchConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_list;
  using detail::parse_number;
  using Z = std::size_t;
  if (key == "runs") c.runs = parse_number<Z>(key, value);
  else if (key == "tests") c.tests = parse_number<Z>(key, value);
  else if (key == "copp_tests") c.copp_tests = parse_number<Z>(key, value);
  else if (key == "n") c.n = parse_number<Z>(key, value);
  else if (key == "epsilon") c.epsilon = parse_number<double>(key, value);
  else if (key == "delta") c.delta = parse_number<double>(key, value);
  else if (key == "gamma") c.gamma = parse_number<double>(key, value);
  else if (key == "n_grid") c.n_grid = parse_list<Z>(key, value);
  else if (key == "delta_eps") c.delta_eps_grid = parse_list<double>(key, value);
  else if (key == "figure2_deltas") c.figure2_deltas = parse_list<double>(key, value);
  else if (key == "theorem4_n") c.theorem4_n = parse_list<Z>(key, value);
  else if (key == "theorem4_runs") c.theorem4_runs = parse_number<Z>(key, value);
  else if (key == "theorem4_tests") c.theorem4_tests = parse_number<Z>(key, value);
  else if (key == "class_offsets") c.class_offsets = parse_list<double>(key, value);
  else if (key == "class_delta0") c.class_delta0 = parse_number<double>(key, value);
  else if (key == "weight_error_mc") c.weight_error_mc = parse_number<Z>(key, value);
  else if (key == "min_variance_margin") c.min_variance_margin = parse_number<double>(key, value);
  else if (key == "threads") c.threads = parse_number<Z>(key, value);
  else if (key == "quantile_model") {
    if (value == "affine") c.quantile.model_kind = QuantileModelKind::affine;
    else if (value == "mlp") c.quantile.model_kind = QuantileModelKind::mlp;
    else throw std::invalid_argument("quantile_model must be affine or mlp");
  } else if (key == "hidden_width") c.quantile.hidden_width = parse_number<Z>(key, value);
  else if (key == "learning_rate") c.quantile.learning_rate = parse_number<double>(key, value);
  else if (key == "epochs") c.quantile.epochs = parse_number<Z>(key, value);
  else if (key == "copp_h") c.copp.mc_samples = parse_number<Z>(key, value);
  else if (key == "copp_grid") c.copp.grid_points = parse_number<Z>(key, value);
  else if (key == "copp_margin") c.copp.grid_margin = parse_number<double>(key, value);
  else if (key == "env_context_variance") c.env.context_variance = parse_number<double>(key, value);
  else if (key == "env_behavior_slope") c.env.behavior_slope = parse_number<double>(key, value);
  else if (key == "env_behavior_variance") c.env.behavior_variance = parse_number<double>(key, value);
  else if (key == "env_target_slope") c.env.target_slope = parse_number<double>(key, value);
  else if (key == "env_target_variance") c.env.target_variance = parse_number<double>(key, value);
  else if (key == "env_mixture_weights") {
    const auto w = parse_list<double>(key, value);
    if (w.size() != 2) throw std::invalid_argument("env_mixture_weights needs two values");
    c.env.mixture_weights = {w[0], w[1]};
  } else if (key == "env_reward_variances") {
    const auto v = parse_list<double>(key, value);
    if (v.size() != 2) throw std::invalid_argument("env_reward_variances needs two values");
    c.env.reward_variances = {v[0], v[1]};
  } else throw std::invalid_argument("unknown config key: " + key);
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "runs", "tests", "copp_tests", "n", "epsilon", "delta", "gamma", "n_grid", "delta_eps", "figure2_deltas",
      "theorem4_n", "theorem4_runs", "theorem4_tests", "class_offsets", "class_delta0", "weight_error_mc",
      "min_variance_margin", "threads", "quantile_model", "hidden_width", "learning_rate", "epochs", "copp_h",
      "copp_grid", "copp_margin", "env_context_variance", "env_behavior_slope", "env_behavior_variance",
      "env_target_slope", "env_target_variance", "env_mixture_weights", "env_reward_variances"};
  return keys;
}

/// Reads flat key=value text over the defaults, then validates.
inline BenchConfig parse_config(std::istream& in, BenchConfig base = {}) {
  for (const auto& [k, v] : parse_key_values(in)) apply_setting(base, k, v);
  base.validate();
  return base;
}

/// PACOPP_<KEY> environment variables (key upper-cased) override settings.
inline void apply_environment(BenchConfig& c) {
  for (const auto& key : config_keys()) {
    std::string var = "PACOPP_";
    for (char ch : key) var += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (const char* v = std::getenv(var.c_str())) apply_setting(c, key, v);
  }
  c.validate();
}

/// Stream layout per trial: child(0) logged data, child(1) test set,
/// child(2) PACOPP fitting, child(3) COPP fitting.
struct TrialStreams {
  Rng data, test, pacopp, copp;

  static TrialStreams make(std::uint64_t master_seed, std::size_t trial, std::uint64_t salt = 0) {
    const Rng base = Rng::for_trial(master_seed, trial).child(salt);
    return {base.child(0), base.child(1), base.child(2), base.child(3)};
  }
};

inline TrialReport make_report(std::string method, std::size_t seed, std::size_t n, const PacParams& params,
                               const CalibratedPredictor& p, std::span<const TargetSample> test) {
  TrialReport r;
  r.method = std::move(method);
  r.seed = seed;
  r.n = n;
  r.epsilon = params.epsilon;
  r.delta = params.delta;
  const auto m = evaluate_predictions([&](const Context& s) { return p.predict(s); }, test);
  r.miscoverage = m.miscoverage;
  r.mean_length = m.mean_length;
  r.threshold = p.threshold();
  r.trivial = p.threshold() == kInfinity;
  r.diag = p.diagnostics();
  return r;
}

/// One PACOPP trial with the true behavior policy on the synthetic environment.
inline TrialReport run_known_trial(const BenchConfig& cfg, std::uint64_t master_seed, std::size_t trial, std::size_t n,
                                   std::uint64_t salt = 0) {
  const SynthEnv env(cfg.env);
  auto st = TrialStreams::make(master_seed, trial, salt);
  const auto d = env.sample_logged(n, st.data);
  const auto test = env.sample_target(cfg.tests, st.test);
  const auto params = cfg.params();
  const auto p = pacopp_known(d, env.behavior_policy(), env.target_policy(), params, cfg.quantile, st.pacopp);
  return make_report("PACOPP", trial, n, params, p, test);
}

/// Figure 1: per n, `runs` trials of PACOPP with known weights; one row per
/// (n, delta_eps) with the band frequency.
inline AggregateTable run_figure1(const BenchConfig& cfg, std::uint64_t master_seed) {
  cfg.validate();
  AggregateTable table;
  for (std::size_t gi = 0; gi < cfg.n_grid.size(); ++gi) {
    const std::size_t n = cfg.n_grid[gi];
    auto trials = parallel_trials(cfg.runs, cfg.threads, [&](std::size_t i) {
      return run_known_trial(cfg, master_seed, i, n, gi);
    });
    for (double de : cfg.delta_eps_grid) {
      table.rows.push_back(aggregate(trials, "PACOPP", n, cfg.epsilon, cfg.delta, de));
    }
    table.trials.insert(table.trials.end(), trials.begin(), trials.end());
  }
  return table;
}

inline std::string figure2_label(double delta) { return "PACOPP(delta=" + format_double(delta) + ")"; }

/// Figure 2: COPP, COPP-RS and PACOPP at each delta on the same per-seed
/// data. PACOPP estimates pi_b; its delta variants and COPP-RS share one
/// rejection-sampled core, so thresholds are comparable seed by seed.
inline std::vector<TrialReport> run_figure2_trial(const BenchConfig& cfg, std::uint64_t master_seed, std::size_t trial) {
  const SynthEnv env(cfg.env);
  auto st = TrialStreams::make(master_seed, trial);
  const auto d = env.sample_logged(cfg.n, st.data);
  const auto test = env.sample_target(cfg.tests, st.test);
  const auto pe = env.target_policy();
  const auto base = cfg.params();

  std::vector<TrialReport> out;
  PolicyFitConfig pcfg;
  pcfg.min_variance_margin = cfg.min_variance_margin;
  const auto unk = prepare_unknown(d, pe, base, pcfg, cfg.quantile, st.pacopp);

  // COPP
  {
    TrialReport r;
    r.method = "COPP";
    r.seed = trial;
    r.n = cfg.n;
    r.epsilon = cfg.epsilon;
    r.delta = std::numeric_limits<double>::quiet_NaN();
    const auto model = prepare_copp(d, pe, base, cfg.copp, cfg.quantile, cfg.min_variance_margin, st.copp);
    const std::span<const TargetSample> sub(test.data(), std::min(test.size(), cfg.copp_tests));
    if (!model) {
      r.trivial = true;
      r.miscoverage = 0.0;
      r.mean_length = kInfinity;
      r.threshold = kInfinity;
    } else {
      Rng pred_rng = st.copp.child(99);
      const auto m = evaluate_predictions(
          [&](const Context& s) {
            return copp_predict(model->calibration, model->quantiles, model->reward_model, model->behavior, pe, s,
                                cfg.epsilon, cfg.copp, pred_rng)
                .interval;
          },
          sub);
      r.miscoverage = m.miscoverage;
      r.mean_length = m.mean_length;
      r.threshold = std::numeric_limits<double>::quiet_NaN();
      r.diag.m = model->calibration.size();
      r.diag.n = cfg.n;
    }
    out.push_back(std::move(r));
  }
  {
    auto r = make_report("COPP-RS", trial, cfg.n, base, copp_rs_predictor(unk.core, base), test);
    r.delta = std::numeric_limits<double>::quiet_NaN();
    out.push_back(std::move(r));
  }
  for (double dl : cfg.figure2_deltas) {
    const auto params = cfg.params(dl);
    out.push_back(make_report(figure2_label(dl), trial, cfg.n, params, pac_predictor(unk.core, params), test));
  }
  return out;
}

inline AggregateTable run_figure2(const BenchConfig& cfg, std::uint64_t master_seed) {
  cfg.validate();
  auto per_trial = parallel_trials(cfg.runs, cfg.threads, [&](std::size_t i) { return run_figure2_trial(cfg, master_seed, i); });
  AggregateTable table;
  for (auto& v : per_trial) table.trials.insert(table.trials.end(), v.begin(), v.end());
  std::vector<std::pair<std::string, double>> methods{{"COPP", cfg.delta}, {"COPP-RS", cfg.delta}};
  for (double dl : cfg.figure2_deltas) methods.emplace_back(figure2_label(dl), dl);
  for (const auto& [name, dl] : methods) {
    std::vector<TrialReport> sel;
    for (const auto& t : table.trials) {
      if (t.method == name) sel.push_back(t);
    }
    auto row = aggregate(sel, name, cfg.n, cfg.epsilon, dl, 1.0);
    table.rows.push_back(row);
  }
  return table;
}

/// Per-seed PACOPP thresholds non-decreasing as delta shrinks.
inline bool thresholds_monotone(std::span<const TrialReport> trials, std::size_t seed) {
  std::vector<std::pair<double, double>> v;
  for (const auto& t : trials) {
    if (t.seed == seed && t.method.rfind("PACOPP", 0) == 0) v.emplace_back(t.delta, t.threshold);
  }
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i].second < v[i - 1].second) return false;
  }
  return true;
}

struct BoundsRow {
  std::size_t n = 0;
  double freq = 0.0;
  double band_freq = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool vacuous = false;
  bool pass = false;
};

struct BoundsReport {
  TheoremConstants constants;
  double band_delta_eps = 0.05;
  std::vector<BoundsRow> rows;
};

/// Compares the empirical PAC and band frequencies with the finite-sample
/// bounds 1 - delta + C_upper / sqrt(n) and 1 - delta - C_band / sqrt(n),
/// each widened by 3 Monte Carlo standard errors.
inline BoundsReport bounds_from_table(const AggregateTable& fig1, const BenchConfig& cfg, double band_delta_eps) {
  const SynthEnv env(cfg.env);
  const auto probes = default_probe_contexts();
  const double B = gaussian_ratio_bound(env.target_policy(), env.behavior_policy(), probes);
  BoundsReport rep{theorem_constants(B, cfg.gamma, cfg.epsilon, cfg.delta, band_delta_eps), band_delta_eps, {}};
  for (std::size_t n : cfg.n_grid) {
    const AggregateRow* band = fig1.find("PACOPP", n, cfg.delta, band_delta_eps);
    if (!band) throw std::invalid_argument("figure 1 table lacks the band row for delta_eps");
    BoundsRow row;
    row.n = n;
    row.freq = band->pac_freq;
    row.band_freq = band->band_freq;
    const double rn = std::sqrt(static_cast<double>(n));
    row.lower = 1.0 - cfg.delta - rep.constants.C_band / rn - 3.0 * band->band_stderr;
    row.upper = 1.0 - cfg.delta + rep.constants.C_upper / rn + 3.0 * band->pac_stderr;
    row.vacuous = row.lower <= 0.0 && row.upper >= 1.0;
    row.pass = row.vacuous || (row.freq <= row.upper && row.band_freq > row.lower);
    rep.rows.push_back(row);
  }
  return rep;
}

inline BoundsReport check_theorem_bounds(const BenchConfig& cfg, std::uint64_t master_seed, double band_delta_eps = 0.05) {
  BenchConfig c = cfg;
  if (std::find(c.delta_eps_grid.begin(), c.delta_eps_grid.end(), band_delta_eps) == c.delta_eps_grid.end()) {
    c.delta_eps_grid.push_back(band_delta_eps);
  }
  return bounds_from_table(run_figure1(c, master_seed), c, band_delta_eps);
}

struct Theorem4Row {
  std::size_t n = 0;
  double median_measure = 0.0;
  std::size_t evaluated = 0;
  std::size_t trivial_trials = 0;
};

struct Theorem4Report {
  std::vector<Theorem4Row> rows;

  [[nodiscard]] bool strictly_decreasing() const {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (!(rows[i].median_measure < rows[i - 1].median_measure)) return false;
    }
    return !rows.empty();
  }
};

/// Median symmetric-difference measure between the PACOPP interval (known
/// weights) and the analytic oracle interval over seeds and test contexts.
/// Trials with an infinite threshold are counted, not measured.
inline Theorem4Report run_theorem4(const BenchConfig& cfg, std::uint64_t master_seed) {
  cfg.validate();
  const SynthEnv env(cfg.env);
  const auto params = cfg.params();
  Theorem4Report rep;
  for (std::size_t gi = 0; gi < cfg.theorem4_n.size(); ++gi) {
    const std::size_t n = cfg.theorem4_n[gi];
    auto per_trial = parallel_trials(cfg.theorem4_runs, cfg.threads, [&](std::size_t i) {
      auto st = TrialStreams::make(master_seed, i, 1000 + gi);
      const auto d = env.sample_logged(n, st.data);
      const auto p = pacopp_known(d, env.behavior_policy(), env.target_policy(), params, cfg.quantile, st.pacopp);
      std::vector<double> measures;
      if (p.threshold() == kInfinity) return measures;
      measures.reserve(cfg.theorem4_tests);
      for (std::size_t j = 0; j < cfg.theorem4_tests; ++j) {
        const Context s = env.sample_context(st.test);
        measures.push_back(
            symmetric_difference_measure(p.predict(s), env.oracle_interval(s, params.eps_lo, params.eps_up)));
      }
      return measures;
    });
    Theorem4Row row;
    row.n = n;
    std::vector<double> all;
    for (auto& m : per_trial) {
      if (m.empty()) ++row.trivial_trials;
      all.insert(all.end(), m.begin(), m.end());
    }
    row.evaluated = all.size();
    row.median_measure = all.empty() ? kInfinity : stats::quantile(all, 0.5);
    rep.rows.push_back(row);
  }
  return rep;
}

/// Behavior-policy class {N(mean_b(s) + c, var_b) : c in offsets}.
inline FinitePolicyClass offset_policy_class(const SynthEnv& env, std::span<const double> offsets) {
  const auto pb = env.behavior_policy();
  std::vector<GaussianLinearPolicy> members;
  for (double c : offsets) {
    auto map = pb.mean_map();
    map.intercept += c;
    members.emplace_back(std::move(map), pb.variance());
  }
  const auto probes = default_probe_contexts();
  return FinitePolicyClass::make(std::move(members), env.target_policy(), probes);
}

/// epsilon + 2 B_Pi sqrt(2 log(|Pi| / delta0) / floor((1 - gamma) n)).
inline double finite_class_level(double epsilon, double bound, std::size_t class_size, double delta0, double gamma,
                                 std::size_t n) {
  const double m = std::floor((1.0 - gamma) * static_cast<double>(n));
  if (!(m > 0.0)) return kInfinity;
  return epsilon + 2.0 * bound * std::sqrt(2.0 * std::log(static_cast<double>(class_size) / delta0) / m);
}

enum class UnknownMode { gaussian, finite_class };

/// PACOPP with an estimated behavior policy, either the Gaussian fit (with
/// the Monte Carlo weight error recorded) or the finite-class MLE.
inline std::vector<TrialReport> run_unknown_behavior(const BenchConfig& cfg, std::uint64_t master_seed, UnknownMode mode) {
  cfg.validate();
  const SynthEnv env(cfg.env);
  const auto params = cfg.params();
  PolicyFitConfig pcfg;
  pcfg.min_variance_margin = cfg.min_variance_margin;
  if (mode == UnknownMode::finite_class) {
    pcfg.estimator = BehaviorEstimator::finite_class;
    pcfg.policy_class = offset_policy_class(env, cfg.class_offsets);
  }
  return parallel_trials(cfg.runs, cfg.threads, [&](std::size_t i) {
    auto st = TrialStreams::make(master_seed, i, 2000 + static_cast<std::uint64_t>(mode));
    const auto d = env.sample_logged(cfg.n, st.data);
    const auto test = env.sample_target(cfg.tests, st.test);
    const auto unk = prepare_unknown(d, env.target_policy(), params, pcfg, cfg.quantile, st.pacopp);
    auto r = make_report(mode == UnknownMode::gaussian ? "PACOPP-gaussian" : "PACOPP-class", i, cfg.n, params,
                         pac_predictor(unk.core, params), test);
    if (mode == UnknownMode::gaussian && unk.behavior) {
      Rng mc = st.pacopp.child(50);
      const auto err = estimate_weight_error(
          *unk.behavior, env.behavior_policy(), env.target_policy(),
          [&](Rng& g) { return env.sample_context(g); }, cfg.weight_error_mc, mc);
      r.delta_w_hat = err.delta_w_hat;
    }
    return r;
  });
}

// CSV writers.

inline void write_trials_csv(std::ostream& out, std::span<const TrialReport> trials) {
  out << "method,seed,n,epsilon,delta,miscoverage,mean_length,trivial,threshold,n_rs,m,k,ties,violations,delta_w_hat\n";
  for (const auto& t : trials) {
    out << t.method << ',' << t.seed << ',' << t.n << ',' << format_double(t.epsilon) << ','
        << format_double(t.delta) << ',' << format_double(t.miscoverage) << ',' << format_double(t.mean_length) << ','
        << (t.trivial ? 1 : 0) << ',' << format_double(t.threshold) << ',' << t.diag.n_rs << ',' << t.diag.m << ','
        << t.diag.k << ',' << (t.diag.ties ? 1 : 0) << ',' << t.diag.violations << ','
        << (t.delta_w_hat ? format_double(*t.delta_w_hat) : std::string()) << '\n';
  }
}

inline void write_aggregate_csv(std::ostream& out, const AggregateTable& t) {
  out << "method,n,delta,delta_eps,runs,pac_freq,pac_stderr,band_freq,band_stderr,coverage_mean,coverage_q10,"
         "coverage_q50,coverage_q90,length_mean,length_q50,trivial_runs\n";
  for (const auto& r : t.rows) {
    out << r.method << ',' << r.n << ',' << format_double(r.delta) << ',' << format_double(r.delta_eps) << ','
        << r.runs << ',' << format_double(r.pac_freq) << ',' << format_double(r.pac_stderr) << ','
        << format_double(r.band_freq) << ',' << format_double(r.band_stderr) << ',' << format_double(r.coverage_mean)
        << ',' << format_double(r.coverage_q10) << ',' << format_double(r.coverage_q50) << ','
        << format_double(r.coverage_q90) << ',' << format_double(r.length_mean) << ',' << format_double(r.length_q50)
        << ',' << r.trivial_runs << '\n';
  }
}

/// n,delta_eps,runs,band_freq,stderr
inline void write_figure1_csv(std::ostream& out, const AggregateTable& t) {
  out << "n,delta_eps,runs,band_freq,stderr\n";
  for (const auto& r : t.rows) {
    out << r.n << ',' << format_double(r.delta_eps) << ',' << r.runs << ',' << format_double(r.band_freq) << ','
        << format_double(r.band_stderr) << '\n';
  }
}

/// method,delta,run,coverage,mean_length,trivial_flag; delta is empty for
/// the baselines.
inline void write_figure2_csv(std::ostream& out, const AggregateTable& t) {
  out << "method,delta,run,coverage,mean_length,trivial_flag\n";
  for (const auto& r : t.trials) {
    out << r.method << ',' << (std::isnan(r.delta) ? std::string() : format_double(r.delta)) << ',' << r.seed << ','
        << format_double(r.coverage()) << ',' << format_double(r.mean_length) << ',' << (r.trivial ? 1 : 0) << '\n';
  }
}

/// n,freq,lower,upper,vacuous,pass
inline void write_bounds_csv(std::ostream& out, const BoundsReport& rep) {
  out << "n,freq,lower,upper,vacuous,pass\n";
  for (const auto& r : rep.rows) {
    out << r.n << ',' << format_double(r.freq) << ',' << format_double(r.lower) << ',' << format_double(r.upper)
        << ',' << (r.vacuous ? 1 : 0) << ',' << (r.pass ? 1 : 0) << '\n';
  }
}

inline void write_theorem4_csv(std::ostream& out, const Theorem4Report& rep) {
  out << "n,median_measure,evaluated,trivial_trials\n";
  for (const auto& r : rep.rows) {
    out << r.n << ',' << format_double(r.median_measure) << ',' << r.evaluated << ',' << r.trivial_trials << '\n';
  }
}

struct PlotPoint {
  double x = 0.0, y = 0.0, yerr = 0.0;
};

inline void write_plot_data(std::ostream& out, std::span<const PlotPoint> pts) {
  out << "x,y,yerr\n";
  for (const auto& p : pts) out << format_double(p.x) << ',' << format_double(p.y) << ',' << format_double(p.yerr) << '\n';
}

/// Figure 1 panel for one delta_eps: x = n, y = band frequency.
inline std::vector<PlotPoint> figure1_panel(const AggregateTable& t, double delta_eps) {
  std::vector<PlotPoint> pts;
  for (const auto& r : t.rows) {
    if (r.delta_eps == delta_eps) pts.push_back({static_cast<double>(r.n), r.band_freq, r.band_stderr});
  }
  return pts;
}

/// Figure 2 panels, x = method position in the table (COPP, COPP-RS, then
/// PACOPP by the configured deltas).
inline std::vector<PlotPoint> figure2_coverage_panel(const AggregateTable& t) {
  std::vector<PlotPoint> pts;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    std::vector<double> cov;
    for (const auto& tr : t.trials) {
      if (tr.method == r.method) cov.push_back(tr.coverage());
    }
    const double se = cov.size() > 1 ? std::sqrt(stats::variance(cov) / static_cast<double>(cov.size())) : 0.0;
    pts.push_back({static_cast<double>(i), r.coverage_mean, se});
  }
  return pts;
}

inline std::vector<PlotPoint> figure2_length_panel(const AggregateTable& t) {
  std::vector<PlotPoint> pts;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    std::vector<double> len;
    for (const auto& tr : t.trials) {
      if (tr.method == r.method && std::isfinite(tr.mean_length)) len.push_back(tr.mean_length);
    }
    const double se = len.size() > 1 ? std::sqrt(stats::variance(len) / static_cast<double>(len.size())) : 0.0;
    pts.push_back({static_cast<double>(i), r.length_mean, se});
  }
  return pts;
}

}  // namespace pacopp
