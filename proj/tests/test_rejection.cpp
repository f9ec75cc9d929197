#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "pacopp/rejection.hpp"
#include "pacopp/stats.hpp"
#include "pacopp/synthenv.hpp"

using namespace pacopp;

namespace {

// Sup of pe(a|s)/pb(a|s) by brute force over a in [-50, 50].
double grid_sup(const GaussianLinearPolicy& pe, const GaussianLinearPolicy& pb, const Context& s) {
  double best = 0.0;
  for (double a = -50.0; a <= 50.0; a += 1e-3) best = std::max(best, pe.density(s, a) / pb.density(s, a));
  return best;
}

}  // namespace

TEST(RatioBound, SharedMeanClosedForm) {
  const auto pe = GaussianLinearPolicy::scalar(0.0, 0.25, 1.0);
  const auto pb = GaussianLinearPolicy::scalar(0.0, 0.25, 4.0);
  const auto probes = probe_grid(-10.0, 10.0, 201);
  EXPECT_DOUBLE_EQ(gaussian_ratio_bound(pe, pb, probes), 2.0);
  for (double s : {-5.0, 0.0, 3.0}) EXPECT_NEAR(grid_sup(pe, pb, Context::scalar(s)), 2.0, 1e-6);
}

TEST(RatioBound, IdenticalPolicies) {
  const auto p = GaussianLinearPolicy::scalar(0.5, 0.25, 2.0);
  EXPECT_DOUBLE_EQ(gaussian_ratio_bound(p, p, probe_grid(-1, 1, 3)), 1.0);
}

TEST(RatioBound, EqualVarianceDifferentMeansUnbounded) {
  const auto pe = GaussianLinearPolicy::scalar(0.0, 0.25, 1.0);
  const auto pb = GaussianLinearPolicy::scalar(1.0, 0.25, 1.0);
  try {
    gaussian_ratio_bound(pe, pb, probe_grid(-1, 1, 3));
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("weight unbounded"), std::string::npos);
  }
  EXPECT_THROW(gaussian_ratio_bound(GaussianLinearPolicy::scalar(0, 0, 4), GaussianLinearPolicy::scalar(0, 0, 1),
                                    probe_grid(-1, 1, 3)),
               std::domain_error);
}

TEST(RatioBound, DifferentMeansCoversGridSupremum) {
  const auto pe = GaussianLinearPolicy::scalar(0.5, 0.25, 1.0);
  const auto pb = GaussianLinearPolicy::scalar(0.0, 0.5, 4.0);
  const auto probes = probe_grid(-4.0, 4.0, 81);
  const double B = gaussian_ratio_bound(pe, pb, probes);
  double worst = 0.0;
  for (double s = -4.0; s <= 4.0; s += 0.5) worst = std::max(worst, grid_sup(pe, pb, Context::scalar(s)));
  EXPECT_GE(B, worst);
  EXPECT_NEAR(B / 1.1, worst, 1e-3 * worst);
}

TEST(RejectionSample, IdenticalPoliciesAcceptAll) {
  const SynthEnv env;
  Rng rng(1);
  const auto d = env.sample_logged(500, rng);
  auto p = std::make_shared<GaussianLinearPolicy>(env.behavior_policy());
  const auto w = WeightFunction::ratio(p, p, 1.0);
  Rng v(2);
  const auto rs = rejection_sample(d, w, v);
  EXPECT_EQ(rs.size(), d.size());
  EXPECT_EQ(rs.violations, 0u);
}

TEST(RejectionSample, ZeroWeightRejectsAll) {
  const SynthEnv env;
  Rng rng(1);
  const auto d = env.sample_logged(500, rng);
  const WeightFunction w([](const Context&, double) { return 0.0; }, 2.0);
  Rng v(2);
  EXPECT_TRUE(rejection_sample(d, w, v).empty());
}

TEST(RejectionSample, ZeroOverZeroIsZero) {
  auto narrow = std::make_shared<GaussianLinearPolicy>(GaussianLinearPolicy::scalar(0, 0, 1e-4));
  const auto w = WeightFunction::ratio(narrow, narrow, 1.0);
  EXPECT_EQ(w(Context::scalar(0.0), 1e3), 0.0);
}

TEST(RejectionSample, CountNearHalfAndOrdered) {
  const SynthEnv env;
  Rng rng(4);
  const auto d = env.sample_logged(2000, rng);
  const auto w = WeightFunction::ratio(std::make_shared<GaussianLinearPolicy>(env.target_policy()),
                                       std::make_shared<GaussianLinearPolicy>(env.behavior_policy()), 2.0);
  Rng v(5);
  const auto rs = rejection_sample(d, w, v);
  EXPECT_GE(rs.size(), 900u);
  EXPECT_LE(rs.size(), 1100u);
  EXPECT_EQ(rs.violations, 0u);
  for (std::size_t i = 1; i < rs.source_index.size(); ++i) ASSERT_LT(rs.source_index[i - 1], rs.source_index[i]);
  for (std::size_t i = 0; i < rs.size(); ++i) ASSERT_EQ(rs.pairs[i].reward, d.samples[rs.source_index[i]].reward);
}

TEST(RejectionSample, MeanAcceptanceOverSeeds) {
  const SynthEnv env;
  const auto w = WeightFunction::ratio(std::make_shared<GaussianLinearPolicy>(env.target_policy()),
                                       std::make_shared<GaussianLinearPolicy>(env.behavior_policy()), 2.0);
  const int seeds = 2000;
  const std::size_t n = 1000;
  double sum = 0.0;
  for (int k = 0; k < seeds; ++k) {
    Rng rng = Rng::for_trial(77, k);
    Rng data = rng.child(0), v = rng.child(1);
    sum += static_cast<double>(rejection_sample(env.sample_logged(n, data), w, v).size());
  }
  const double mean = sum / seeds;
  // N_rs ~ Bin(n, 1/2).
  const double se = std::sqrt(n * 0.25 / seeds);
  EXPECT_NEAR(mean, 500.0, 3 * se);
}

TEST(RejectionSample, UnderestimatedBoundCountsViolations) {
  const SynthEnv env;
  Rng rng(6);
  const auto d = env.sample_logged(2000, rng);
  const auto w = WeightFunction::ratio(std::make_shared<GaussianLinearPolicy>(env.target_policy()),
                                       std::make_shared<GaussianLinearPolicy>(env.behavior_policy()), 1.0);
  Rng v(7);
  EXPECT_GT(rejection_sample(d, w, v).violations, 0u);
}

TEST(RejectionSample, BoundBelowOneRejected) {
  EXPECT_THROW(WeightFunction([](const Context&, double) { return 1.0; }, 0.5), std::invalid_argument);
}

TEST(RejectionSample, AcceptedRewardsFollowTargetLaw) {
  const SynthEnv env;
  const auto w = WeightFunction::ratio(std::make_shared<GaussianLinearPolicy>(env.target_policy()),
                                       std::make_shared<GaussianLinearPolicy>(env.behavior_policy()), 2.0);
  int rejections = 0;
  for (int seed = 0; seed < 10; ++seed) {
    Rng base = Rng::for_trial(2024, seed);
    Rng data = base.child(0), v = base.child(1), direct = base.child(2);
    const auto rs = rejection_sample(env.sample_logged(4000, data), w, v);
    std::vector<double> a, b;
    for (const auto& x : rs.pairs) a.push_back(x.reward);
    for (const auto& x : env.sample_target(50000, direct)) b.push_back(x.reward);
    if (stats::ks_two_sample(a, b).p_value < 0.01) ++rejections;
  }
  EXPECT_LE(rejections, 1);
}

TEST(RejectionSample, DeterministicGivenStream) {
  const SynthEnv env;
  Rng rng(8);
  const auto d = env.sample_logged(300, rng);
  const auto w = WeightFunction::ratio(std::make_shared<GaussianLinearPolicy>(env.target_policy()),
                                       std::make_shared<GaussianLinearPolicy>(env.behavior_policy()), 2.0);
  Rng v1(9), v2(9);
  EXPECT_EQ(rejection_sample(d, w, v1).source_index, rejection_sample(d, w, v2).source_index);
}

TEST(RejectionSample, SplitAfterSampling) {
  RsDataset rs;
  for (int i = 0; i < 7; ++i) {
    rs.pairs.push_back({Context::scalar(i), static_cast<double>(i)});
    rs.source_index.push_back(static_cast<std::size_t>(2 * i));
  }
  const auto [train, cal] = split_dataset(rs, 0.5);
  EXPECT_EQ(train.size(), 3u);
  EXPECT_EQ(cal.size(), 4u);
  EXPECT_EQ(cal.source_index.front(), 6u);
}
