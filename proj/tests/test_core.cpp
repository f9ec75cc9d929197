#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "pacopp/core.hpp"
#include "pacopp/io.hpp"

using namespace pacopp;

namespace {

LoggedDataset numbered(std::size_t n) {
  LoggedDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.samples.push_back({Context::scalar(static_cast<double>(i)), 0.0, static_cast<double>(i)});
  }
  return d;
}

}  // namespace

TEST(Split, TenHalf) {
  const auto s = split_dataset(numbered(10), 0.5);
  ASSERT_EQ(s.train.size(), 5u);
  ASSERT_EQ(s.cal.size(), 5u);
  EXPECT_EQ(s.train.samples.front().reward, 0.0);
  EXPECT_EQ(s.cal.samples.front().reward, 5.0);
  EXPECT_EQ(s.cal.samples.back().reward, 9.0);
}

TEST(Split, ThreeHalfRoundsUp) {
  const auto s = split_dataset(numbered(3), 0.5);
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_EQ(s.cal.size(), 2u);
  EXPECT_EQ(s.cal.samples[0].reward, 1.0);
}

TEST(Split, Empty) {
  const auto s = split_dataset(LoggedDataset{}, 0.3);
  EXPECT_TRUE(s.train.empty());
  EXPECT_TRUE(s.cal.empty());
}

TEST(Split, ExhaustiveCounts) {
  for (int g = 1; g <= 9; ++g) {
    const double gamma = g / 10.0;
    for (std::size_t n = 0; n <= 1000; ++n) {
      // Exact ceil(g * n / 10) in integers.
      const std::size_t want = (static_cast<std::size_t>(g) * n + 9) / 10;
      const auto s = split_dataset(numbered(n), gamma);
      ASSERT_EQ(s.cal.size(), want) << "n=" << n << " gamma=" << gamma;
      ASSERT_EQ(s.train.size() + s.cal.size(), n);
      if (!s.cal.empty()) {
        ASSERT_EQ(s.cal.samples.back().reward, static_cast<double>(n - 1));
      }
    }
  }
}

TEST(Split, RejectsBadGamma) {
  EXPECT_THROW(split_dataset(numbered(3), 0.0), std::invalid_argument);
  EXPECT_THROW(split_dataset(numbered(3), 1.0), std::invalid_argument);
}

TEST(Context, RejectsNonFinite) {
  EXPECT_THROW(Context::scalar(std::nan("")), std::invalid_argument);
  EXPECT_THROW(Context({1.0, kInfinity}), std::invalid_argument);
  EXPECT_EQ(Context({1.0, 2.0}).dim(), 2u);
}

TEST(Policy, DensityIntegratesToOne) {
  const auto p = GaussianLinearPolicy::scalar(0.3, 0.25, 4.0);
  for (double s = -10.0; s <= 10.0; s += 2.5) {
    const Context c = Context::scalar(s);
    const double mu = p.mean(c);
    const double sd = std::sqrt(p.variance());
    const double mass = oracle::simpson([&](double a) { return p.density(c, a); }, mu - 10 * sd, mu + 10 * sd, 4000);
    EXPECT_NEAR(mass, 1.0, 1e-6) << "s=" << s;
  }
}

TEST(Policy, SampleMomentsAndVarianceConvention) {
  const auto p = GaussianLinearPolicy::scalar(0.0, 0.25, 4.0);
  Rng rng(3);
  const Context c = Context::scalar(4.0);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double a = p.sample(c, rng);
    sum += a;
    sq += a * a;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 1.0, 3 * 2.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n - mean * mean, 4.0, 0.1);
}

TEST(Policy, RejectsNonPositiveVariance) {
  EXPECT_THROW(GaussianLinearPolicy::scalar(0, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(GaussianLinearPolicy::scalar(0, 1, -1.0), std::invalid_argument);
}

TEST(PacParams, Validation) {
  EXPECT_NO_THROW(PacParams::symmetric(0.2, 0.1, 0.5));
  PacParams p = PacParams::symmetric(0.2, 0.1);
  EXPECT_DOUBLE_EQ(p.eps_lo, 0.1);
  EXPECT_DOUBLE_EQ(p.eps_up, 0.9);
  p.eps_up = 0.8;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  EXPECT_THROW(PacParams::symmetric(0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(PacParams::symmetric(0.2, 1.0), std::invalid_argument);
  PacParams skew{0.2, 0.1, 0.05, 0.85, 0.5};
  EXPECT_NO_THROW(skew.validate());
}

TEST(Interval, Basics) {
  const auto c = PredictionInterval::closed(-1.0, 1.0);
  EXPECT_TRUE(c.contains(-1.0));
  EXPECT_TRUE(c.contains(1.0));
  EXPECT_FALSE(c.contains(1.0000001));
  EXPECT_DOUBLE_EQ(c.length(), 2.0);
  EXPECT_TRUE(PredictionInterval::whole_line().contains(1e300));
  EXPECT_EQ(PredictionInterval::whole_line().length(), kInfinity);
  EXPECT_TRUE(PredictionInterval::empty().is_empty());
  EXPECT_FALSE(PredictionInterval::empty().contains(0.0));
  EXPECT_EQ(PredictionInterval::empty().length(), 0.0);
  EXPECT_THROW(PredictionInterval::closed(1.0, 0.0), std::invalid_argument);
}

TEST(Rng, Deterministic) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(43);
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, ChildrenIgnoreParentPosition) {
  Rng a(7);
  const Rng before = a.child(3);
  a.next_u64();
  a.next_u64();
  Rng after = a.child(3);
  Rng before_copy = before;
  for (int i = 0; i < 10; ++i) ASSERT_EQ(before_copy.next_u64(), after.next_u64());
  EXPECT_NE(Rng::for_trial(1, 0).child(0).next_u64(), Rng::for_trial(1, 1).child(0).next_u64());
}

TEST(Rng, UniformMoments) {
  Rng r(9);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 3 * std::sqrt(1.0 / 12 / n));
}

TEST(Csv, SingleRow) {
  std::istringstream in("s,a,r\n0.1,0.2,0.3\n");
  const auto d = read_csv(in);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.samples[0].context[0], 0.1);
  EXPECT_EQ(d.samples[0].action, 0.2);
  EXPECT_EQ(d.samples[0].reward, 0.3);
}

TEST(Csv, NanRejectedWithLine) {
  std::istringstream in("s,a,r\n0.1,0.2,0.3\n0.1,NaN,0.3\n");
  try {
    read_csv(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Csv, MalformedRows) {
  std::istringstream short_row("s,a,r\n0.1,0.2\n");
  EXPECT_THROW(read_csv(short_row), ParseError);
  std::istringstream junk("s,a,r\n0.1,abc,0.3\n");
  EXPECT_THROW(read_csv(junk), ParseError);
  std::istringstream bad_header("x,y\n1,2\n");
  EXPECT_THROW(read_csv(bad_header), ParseError);
}

TEST(Csv, EmptyDataSection) {
  std::istringstream in("s,a,r\n");
  EXPECT_TRUE(read_csv(in).empty());
}

TEST(Csv, VectorContextsAndRoundTrip) {
  LoggedDataset d;
  Rng r(5);
  for (int i = 0; i < 50; ++i) d.samples.push_back({Context({r.normal(), r.normal()}), r.normal(), r.normal() * 1e-7});
  std::stringstream buf;
  write_csv(buf, d);
  std::string header;
  std::getline(buf, header);
  EXPECT_EQ(header, "s1,s2,a,r");
  buf.seekg(0);
  const auto back = read_csv(buf);
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    ASSERT_EQ(back.samples[i].context.dim(), 2u);
    EXPECT_EQ(back.samples[i].context[0], d.samples[i].context[0]);
    EXPECT_EQ(back.samples[i].context[1], d.samples[i].context[1]);
    EXPECT_EQ(back.samples[i].action, d.samples[i].action);
    EXPECT_EQ(back.samples[i].reward, d.samples[i].reward);
  }
}

TEST(Csv, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "pacopp_core_test.csv";
  {
    std::ofstream out(path);
    out << "s,a,r\n1,2,3\n4,5,6\n";
  }
  const auto d = load_csv(path.string());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.samples[1].reward, 6.0);
  std::filesystem::remove(path);
  EXPECT_THROW(load_csv(path.string()), std::runtime_error);
}

TEST(Format, RoundTrip) {
  Rng r(11);
  for (int i = 0; i < 1000; ++i) {
    const double x = (r.uniform() - 0.5) * std::pow(10.0, static_cast<int>(r.uniform() * 40) - 20);
    double y = 0.0;
    ASSERT_TRUE(parse_double(format_double(x), y));
    ASSERT_EQ(x, y);
  }
  EXPECT_EQ(format_double(kInfinity), "inf");
  EXPECT_EQ(format_double(-kInfinity), "-inf");
}
