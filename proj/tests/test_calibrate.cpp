#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "pacopp/bench.hpp"
#include "pacopp/calibrate.hpp"
#include "pacopp/synthenv.hpp"

using namespace pacopp;

namespace {

ScoreList random_scores(Rng& r, std::size_t m, bool ties) {
  ScoreList s;
  for (std::size_t i = 0; i < m; ++i) {
    s.scores.push_back(ties ? std::floor(r.uniform() * 5.0) : r.normal());
  }
  return s;
}

QuantilePairModel band(double lo, double up) {
  return QuantilePairModel(AffineQuantile{lo, {}}, AffineQuantile{up, {}}, 0.1, 0.9);
}

}  // namespace

TEST(BinomialK, Examples) {
  EXPECT_EQ(binomial_quantile_k(5, 0.2, 0.1), -1);
  EXPECT_EQ(binomial_quantile_k(10, 0.5, 0.5), 4);
  EXPECT_EQ(binomial_quantile_k(100, 0.2, 0.1), 14);
  EXPECT_EQ(binomial_quantile_k(0, 0.2, 0.1), -1);
  EXPECT_THROW(binomial_quantile_k(10, 0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(binomial_quantile_k(10, 0.2, 1.0), std::invalid_argument);
}

TEST(BinomialK, ExactOracleSmallGrid) {
  // The full M <= 300 sweep runs in the acceptance binary.
  for (unsigned i = 1; i <= 20; i += 3) {
    for (unsigned j = 1; j <= 20; j += 3) {
      for (unsigned M = 0; M <= 60; ++M) {
        ASSERT_EQ(binomial_quantile_k(M, i / 21.0, j / 21.0), oracle::binomial_k_exact(M, i, j, 21))
            << "M=" << M << " eps=" << i << "/21 delta=" << j << "/21";
      }
    }
  }
}

TEST(BinomialK, HoeffdingSandwich) {
  for (std::size_t m : {30u, 100u, 300u, 1000u}) {
    for (double eps : {0.05, 0.1, 0.2, 0.4}) {
      for (double delta : {0.01, 0.1, 0.5}) {
        const int k = binomial_quantile_k(m, eps, delta);
        if (k < 0) continue;
        const double md = static_cast<double>(m);
        EXPECT_GE(k, md * (eps - std::sqrt(std::log(1.0 / delta) / (2 * md))) - 1e-9);
        EXPECT_LE(k, md * (eps + std::sqrt(std::log(1.0 / (1.0 - delta)) / (2 * md))) + 1e-9);
      }
    }
  }
}

TEST(BinomialK, LargeM) {
  const int k = binomial_quantile_k(100000, 0.2, 0.1);
  // Normal approximation: 20000 - 1.2816 * sqrt(16000) ~ 19838.
  EXPECT_NEAR(k, 19838, 3);
}

TEST(Nonconformity, Examples) {
  const auto m = band(-1.0, 1.0);
  const Context s = Context::scalar(0.0);
  EXPECT_EQ(nonconformity(m, s, 2.0), 1.0);
  EXPECT_EQ(nonconformity(m, s, 0.0), -1.0);
  EXPECT_EQ(nonconformity(band(0.0, 0.0), s, 0.0), 0.0);
}

TEST(PacThreshold, Examples) {
  Rng r(1);
  EXPECT_EQ(pac_threshold(random_scores(r, 5, false), 0.2, 0.1), kInfinity);
  ScoreList ten;
  for (int i = 10; i >= 1; --i) ten.scores.push_back(i);
  EXPECT_EQ(pac_threshold(ten, 0.5, 0.5), 6.0);
  EXPECT_EQ(pac_threshold(ScoreList{}, 0.2, 0.1), kInfinity);
}

TEST(PacThreshold, MatchesArgminOracle) {
  Rng r(2);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t m = 1 + static_cast<std::size_t>(r.uniform() * 200);
    const double eps = 0.05 + 0.45 * r.uniform();
    const double delta = 0.05 + 0.45 * r.uniform();
    const auto s = random_scores(r, m, t % 4 == 0);
    const int k = binomial_quantile_k(m, eps, delta);
    ASSERT_EQ(pac_threshold(s, eps, delta), oracle::argmin_threshold(s.scores, k)) << "trial " << t;
  }
}

TEST(PacThreshold, AllEqualScores) {
  ScoreList s{std::vector<double>(200, 1.5)};
  EXPECT_EQ(pac_threshold(s, 0.2, 0.1), 1.5);
  EXPECT_TRUE(s.has_ties());
}

TEST(PacThreshold, MonotoneInDeltaAndEpsilon) {
  Rng r(3);
  const auto s = random_scores(r, 300, false);
  double prev = kInfinity;
  for (double delta = 0.01; delta <= 0.5 + 1e-12; delta += 0.01) {
    const double t = pac_threshold(s, 0.2, delta);
    EXPECT_LE(t, prev);
    prev = t;
  }
  prev = kInfinity;
  for (double eps = 0.01; eps <= 0.5 + 1e-12; eps += 0.01) {
    const double t = pac_threshold(s, eps, 0.1);
    EXPECT_LE(t, prev);
    prev = t;
  }
}

TEST(SplitCp, Examples) {
  ScoreList nine;
  for (int i = 9; i >= 1; --i) nine.scores.push_back(i * 1.0);
  EXPECT_EQ(split_cp_threshold(nine, 0.8), 8.0);
  EXPECT_EQ(split_cp_threshold(ScoreList{{0.3}}, 0.9), kInfinity);
  EXPECT_EQ(split_cp_threshold(ScoreList{}, 0.8), kInfinity);
  EXPECT_NEAR(pac_inflated_split_level(0.2, 0.1, 100), 0.8 + std::sqrt(std::log(10.0) / 200), 1e-15);
  EXPECT_NEAR(pac_inflated_split_level(0.2, 0.1, 100), 0.9073, 1e-4);
  EXPECT_EQ(split_cp_min_calibration(0.2, 0.1), 29u);
  EXPECT_LE(pac_inflated_split_level(0.2, 0.1, 29), 1.0);
  EXPECT_GT(pac_inflated_split_level(0.2, 0.1, 28), 1.0);
}

TEST(Predict, Examples) {
  const auto m = band(-1.0, 1.0);
  const Context s = Context::scalar(0.0);
  EXPECT_EQ(CalibratedPredictor(m, 0.0, PacParams{}, {}).predict(s), PredictionInterval::closed(-1.0, 1.0));
  EXPECT_EQ(CalibratedPredictor(m, 0.5, PacParams{}, {}).predict(s), PredictionInterval::closed(-1.5, 1.5));
  EXPECT_TRUE(predict(CalibratedPredictor(m, kInfinity, PacParams{}, {}), s).is_whole_line());
}

TEST(Predict, MembershipDualityAndWidth) {
  const QuantilePairModel m(AffineQuantile{-1.0, {0.5}}, AffineQuantile{2.0, {1.5}}, 0.1, 0.9);
  Rng r(4);
  for (double tau : {-0.3, 0.0, 0.7}) {
    const CalibratedPredictor p(m, tau, PacParams{}, {});
    for (int i = 0; i < 10000; ++i) {
      const Context s = Context::scalar(r.normal(0, 3));
      const double rew = r.normal(0, 6);
      const auto [lo, up] = m.bounds(s);
      if (lo - tau > up + tau) continue;  // negative tau can empty the band
      const auto c = p.predict(s);
      ASSERT_EQ(c.contains(rew), nonconformity(m, s, rew) <= tau);
      ASSERT_EQ(p.covers(s, rew), c.contains(rew));
      ASSERT_NEAR(c.length(), (up - lo) + 2 * tau, 1e-12);
    }
  }
}

TEST(PacoppKnown, EmptyDataIsTrivial) {
  const SynthEnv env;
  Rng rng(5);
  const auto p = pacopp_known(LoggedDataset{}, env.behavior_policy(), env.target_policy(),
                              PacParams::symmetric(0.2, 0.1), QuantileTrainConfig{}, rng);
  EXPECT_EQ(p.threshold(), kInfinity);
  EXPECT_TRUE(p.diagnostics().trivial);
  EXPECT_EQ(p.diagnostics().k, -1);
  EXPECT_EQ(p.model().q_lo(Context::scalar(3.0)), 0.0);
  EXPECT_TRUE(p.predict(Context::scalar(1.0)).is_whole_line());
}

TEST(PacoppKnown, PropagatesUnboundedWeight) {
  const auto pe = GaussianLinearPolicy::scalar(0, 0.25, 4.0);
  const auto pb = GaussianLinearPolicy::scalar(0, 0.25, 1.0);
  Rng rng(6);
  LoggedDataset d;
  d.samples.push_back({Context::scalar(0), 0, 0});
  EXPECT_THROW(pacopp_known(d, pb, pe, PacParams::symmetric(0.2, 0.1), QuantileTrainConfig{}, rng), std::domain_error);
}

TEST(PacoppKnown, Diagnostics) {
  const SynthEnv env;
  Rng data(7), fit(8);
  const auto d = env.sample_logged(2000, data);
  const auto params = PacParams::symmetric(0.2, 0.1);
  const auto p = pacopp_known(d, env.behavior_policy(), env.target_policy(), params, QuantileTrainConfig{}, fit);
  const auto& diag = p.diagnostics();
  EXPECT_EQ(diag.n, 2000u);
  EXPECT_EQ(diag.bound_B, 2.0);
  EXPECT_EQ(diag.violations, 0u);
  EXPECT_EQ(diag.m, calibration_count(diag.n_rs, 0.5));
  EXPECT_EQ(diag.k, binomial_quantile_k(diag.m, 0.2, 0.1));
  EXPECT_TRUE(std::isfinite(p.threshold()));
}

TEST(PacoppKnown, OnPolicyPacFrequency) {
  // pi_e = pi_b: B = 1 and every sample is accepted.
  const SynthEnv env;
  const auto pb = env.behavior_policy();
  const auto params = PacParams::symmetric(0.2, 0.1);
  const int runs = 500;
  const auto ok = parallel_trials(runs, 0, [&](std::size_t i) {
    Rng base = Rng::for_trial(31, i);
    Rng data = base.child(0), test = base.child(1), fit = base.child(2);
    const auto d = env.sample_logged(2000, data);
    const auto t = env.sample_logged(10000, test);
    std::vector<TargetSample> ts;
    for (const auto& x : t.samples) ts.push_back({x.context, x.reward});
    const auto p = pacopp_known(d, pb, pb, params, QuantileTrainConfig{}, fit);
    return evaluate_miscoverage([&](const Context& s) { return p.predict(s); }, ts) <= 0.2 ? 1 : 0;
  });
  int hits = 0;
  for (int v : ok) hits += v;
  EXPECT_GE(hits, 440) << hits << " of " << runs;
}

TEST(PacoppKnown, DeterministicGivenSeed) {
  const SynthEnv env;
  Rng data(9);
  const auto d = env.sample_logged(800, data);
  Rng a(10), b(10);
  const auto pa = pacopp_known(d, env.behavior_policy(), env.target_policy(), PacParams::symmetric(0.2, 0.1), {}, a);
  const auto pb = pacopp_known(d, env.behavior_policy(), env.target_policy(), PacParams::symmetric(0.2, 0.1), {}, b);
  EXPECT_EQ(pa.threshold(), pb.threshold());
  EXPECT_EQ(pa.predict(Context::scalar(1.3)), pb.predict(Context::scalar(1.3)));
}

TEST(PredictorIo, RoundTrip) {
  const SynthEnv env;
  Rng data(11), fit(12);
  const auto d = env.sample_logged(1000, data);
  const auto p = pacopp_known(d, env.behavior_policy(), env.target_policy(), PacParams::symmetric(0.2, 0.1), {}, fit);
  std::stringstream buf;
  write_predictor(buf, p);
  const auto back = read_predictor(buf);
  EXPECT_EQ(back.threshold(), p.threshold());
  EXPECT_EQ(back.diagnostics().k, p.diagnostics().k);
  EXPECT_EQ(back.diagnostics().n_rs, p.diagnostics().n_rs);
  for (double s = -4; s <= 4; s += 0.5) EXPECT_EQ(back.predict(Context::scalar(s)), p.predict(Context::scalar(s)));

  const CalibratedPredictor inf(QuantilePairModel::trivial(0.1, 0.9), kInfinity, PacParams{}, {});
  std::stringstream buf2;
  write_predictor(buf2, inf);
  EXPECT_EQ(read_predictor(buf2).threshold(), kInfinity);
}

TEST(Predict, NegativeThresholdCanEmpty) {
  const QuantilePairModel m(AffineQuantile{-1.0, {}}, AffineQuantile{1.0, {}}, 0.1, 0.9);
  const CalibratedPredictor p(m, -1.5, PacParams{}, {});
  EXPECT_TRUE(p.predict(Context::scalar(0.0)).is_empty());
  EXPECT_FALSE(p.covers(Context::scalar(0.0), 0.0));
  const CalibratedPredictor q(m, -0.5, PacParams{}, {});
  EXPECT_EQ(q.predict(Context::scalar(0.0)), PredictionInterval::closed(-0.5, 0.5));
}
