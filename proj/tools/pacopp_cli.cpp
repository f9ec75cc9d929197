// pacopp command-line front end: synthetic benchmarks, fitting from CSV
// data and interval prediction from a saved predictor.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pacopp/pacopp.hpp"

namespace fs = std::filesystem;
using namespace pacopp;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> tests;
  std::string out = "results";
  std::string config;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--runs", c.runs, "number of seeded trials");
  app->add_option("--tests", c.tests, "test points per trial");
  app->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  if (with_out) app->add_option("--out", c.out, "output directory");
}

BenchConfig load_config(const Common& c) {
  BenchConfig cfg;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw std::runtime_error("cannot open config " + c.config);
    cfg = parse_config(in);
  }
  apply_environment(cfg);
  if (c.runs) cfg.runs = *c.runs;
  if (c.tests) cfg.tests = *c.tests;
  cfg.validate();
  return cfg;
}

template <class Writer>
void write_file(const fs::path& path, Writer&& w) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  w(out);
  std::cout << "wrote " << path.string() << '\n';
}

std::string interval_text(const PredictionInterval& c) {
  if (c.is_empty()) return "(empty)";
  const std::string lo = c.lo == -kInfinity ? "(-inf" : "[" + format_double(c.lo);
  const std::string hi = c.hi == kInfinity ? "inf)" : format_double(c.hi) + "]";
  return lo + ", " + hi;
}

/// "intercept,slope_1,...,slope_d,variance"
GaussianLinearPolicy parse_policy(const std::string& text) {
  std::vector<double> v;
  for (auto f : split_fields(text, ',')) {
    double x = 0.0;
    if (!parse_double(trim(f), x)) throw std::invalid_argument("bad policy spec: " + text);
    v.push_back(x);
  }
  if (v.size() < 3) throw std::invalid_argument("policy spec needs intercept, slopes and variance: " + text);
  const double variance = v.back();
  v.pop_back();
  const double intercept = v.front();
  return GaussianLinearPolicy(AffineMap{intercept, std::vector<double>(v.begin() + 1, v.end())}, variance);
}

void print_report(const TrialReport& r) {
  std::cout << "method: " << r.method << '\n'
            << "seed: " << r.seed << '\n'
            << "n: " << r.n << '\n'
            << "epsilon: " << format_double(r.epsilon) << '\n'
            << "delta: " << format_double(r.delta) << '\n'
            << "miscoverage: " << format_double(r.miscoverage) << '\n'
            << "mean_length: " << format_double(r.mean_length) << '\n'
            << "trivial: " << (r.trivial ? "yes" : "no") << '\n'
            << "threshold: " << format_double(r.threshold) << '\n'
            << "n_rs: " << r.diag.n_rs << '\n'
            << "m: " << r.diag.m << '\n'
            << "k: " << r.diag.k << '\n'
            << "ties: " << (r.diag.ties ? "yes" : "no") << '\n'
            << "violations: " << r.diag.violations << '\n'
            << "bound_B: " << format_double(r.diag.bound_B) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PAC off-policy prediction intervals"};
  app.require_subcommand(1);

  Common sim_opts, f1_opts, f2_opts, b_opts, t4_opts;
  std::optional<std::size_t> sim_n;
  auto* simulate = app.add_subcommand("simulate", "run one PACOPP trial and print its report");
  add_common(simulate, sim_opts, false);
  simulate->add_option("--n", sim_n, "logged sample size");

  auto* figure1 = app.add_subcommand("figure1", "band frequency over the n grid");
  add_common(figure1, f1_opts);
  auto* figure2 = app.add_subcommand("figure2", "COPP, COPP-RS and PACOPP coverage and length");
  add_common(figure2, f2_opts);
  auto* bounds = app.add_subcommand("bounds", "empirical PAC frequency against the finite-sample bounds");
  add_common(bounds, b_opts);
  double band_de = 0.05;
  bounds->add_option("--delta-eps", band_de, "band width for the lower bound");
  auto* theorem4 = app.add_subcommand("theorem4", "symmetric difference to the oracle interval over n");
  add_common(theorem4, t4_opts);

  std::string data_path, pe_spec, pb_spec, model_out = "predictor.txt";
  std::uint64_t cal_seed = 1;
  double eps = 0.2, del = 0.1, gam = 0.5;
  std::string qkind = "affine";
  auto* calibrate = app.add_subcommand("calibrate", "fit a predictor from logged CSV data");
  calibrate->add_option("--data", data_path, "CSV with header s,a,r or s1..sd,a,r")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--pe", pe_spec, "target policy: intercept,slopes...,variance")->required();
  calibrate->add_option("--pb", pb_spec, "behavior policy (same format); estimated when omitted");
  calibrate->add_option("--out", model_out, "predictor file");
  calibrate->add_option("--seed", cal_seed, "seed");
  calibrate->add_option("--epsilon", eps, "miscoverage level");
  calibrate->add_option("--delta", del, "confidence parameter");
  calibrate->add_option("--gamma", gam, "calibration fraction");
  calibrate->add_option("--quantile-model", qkind, "affine or mlp")->check(CLI::IsMember({"affine", "mlp"}));

  std::string model_path, s_text;
  auto* predict_cmd = app.add_subcommand("predict", "print the interval for one context");
  predict_cmd->add_option("--model", model_path, "predictor file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--s", s_text, "context value(s), comma separated")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      auto cfg = load_config(sim_opts);
      print_report(run_known_trial(cfg, sim_opts.seed, 0, sim_n.value_or(cfg.n)));
    } else if (figure1->parsed()) {
      const auto cfg = load_config(f1_opts);
      const fs::path dir(f1_opts.out);
      fs::create_directories(dir);
      const auto t = run_figure1(cfg, f1_opts.seed);
      write_file(dir / "figure1.csv", [&](std::ostream& o) { write_figure1_csv(o, t); });
      write_file(dir / "figure1_aggregate.csv", [&](std::ostream& o) { write_aggregate_csv(o, t); });
      write_file(dir / "figure1_trials.csv", [&](std::ostream& o) { write_trials_csv(o, t.trials); });
      for (double de : cfg.delta_eps_grid) {
        const auto pts = figure1_panel(t, de);
        write_file(dir / ("figure1_delta_eps_" + format_double(de) + ".plot.csv"),
                   [&](std::ostream& o) { write_plot_data(o, pts); });
      }
    } else if (figure2->parsed()) {
      const auto cfg = load_config(f2_opts);
      const fs::path dir(f2_opts.out);
      fs::create_directories(dir);
      const auto t = run_figure2(cfg, f2_opts.seed);
      write_file(dir / "figure2.csv", [&](std::ostream& o) { write_figure2_csv(o, t); });
      write_file(dir / "figure2_aggregate.csv", [&](std::ostream& o) { write_aggregate_csv(o, t); });
      const auto cov = figure2_coverage_panel(t);
      const auto len = figure2_length_panel(t);
      write_file(dir / "figure2_coverage.plot.csv", [&](std::ostream& o) { write_plot_data(o, cov); });
      write_file(dir / "figure2_length.plot.csv", [&](std::ostream& o) { write_plot_data(o, len); });
      for (const auto& r : t.rows) {
        std::cout << r.method << ": mean coverage " << format_double(r.coverage_mean) << ", mean length "
                  << format_double(r.length_mean) << '\n';
      }
    } else if (bounds->parsed()) {
      const auto cfg = load_config(b_opts);
      const fs::path dir(b_opts.out);
      fs::create_directories(dir);
      const auto rep = check_theorem_bounds(cfg, b_opts.seed, band_de);
      write_file(dir / "bounds.csv", [&](std::ostream& o) { write_bounds_csv(o, rep); });
      std::cout << "C_upper " << format_double(rep.constants.C_upper) << ", C_band " << format_double(rep.constants.C_band)
                << '\n';
    } else if (theorem4->parsed()) {
      const auto cfg = load_config(t4_opts);
      const fs::path dir(t4_opts.out);
      fs::create_directories(dir);
      const auto rep = run_theorem4(cfg, t4_opts.seed);
      write_file(dir / "theorem4.csv", [&](std::ostream& o) { write_theorem4_csv(o, rep); });
      std::vector<PlotPoint> pts;
      for (const auto& r : rep.rows) pts.push_back({static_cast<double>(r.n), r.median_measure, 0.0});
      write_file(dir / "theorem4.plot.csv", [&](std::ostream& o) { write_plot_data(o, pts); });
    } else if (calibrate->parsed()) {
      const auto d = load_csv(data_path);
      const auto pe = parse_policy(pe_spec);
      const auto params = PacParams::symmetric(eps, del, gam);
      QuantileTrainConfig qcfg;
      qcfg.model_kind = qkind == "mlp" ? QuantileModelKind::mlp : QuantileModelKind::affine;
      Rng rng(cal_seed);
      std::optional<CalibratedPredictor> p;
      if (!pb_spec.empty()) {
        p.emplace(pacopp_known(d, parse_policy(pb_spec), pe, params, qcfg, rng));
      } else {
        p.emplace(pacopp_unknown(d, pe, params, PolicyFitConfig{}, qcfg, rng));
      }
      write_file(model_out, [&](std::ostream& o) { write_predictor(o, *p); });
      std::cout << "threshold " << format_double(p->threshold()) << '\n';
    } else if (predict_cmd->parsed()) {
      std::ifstream in(model_path);
      const auto p = read_predictor(in);
      std::vector<double> s;
      for (auto f : split_fields(s_text, ',')) {
        double x = 0.0;
        if (!parse_double(trim(f), x)) throw std::invalid_argument("bad context value: " + s_text);
        s.push_back(x);
      }
      std::cout << interval_text(p.predict(Context(std::move(s)))) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
