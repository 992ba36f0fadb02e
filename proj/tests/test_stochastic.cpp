#include "etlsim/stochastic.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

using namespace etlsim;

namespace {

struct Moments {
  double mean = 0;
  double variance = 0;
};

template <typename Draw>
Moments moments(int n, Draw&& draw) {
  // Welford, so the oracle does not share arithmetic with the samplers.
  double mean = 0, m2 = 0;
  for (int i = 1; i <= n; ++i) {
    const double x = draw();
    const double d = x - mean;
    mean += d / i;
    m2 += d * (x - mean);
  }
  return {mean, m2 / (n - 1)};
}

RngStream stream(std::uint64_t seed, std::uint64_t index = 0) {
  return RngStream(seed, StreamId{index, StreamPurpose::processing_time});
}

}  // namespace

TEST(SampleTicks, DeterministicModelIsConstant) {
  auto rng = stream(1);
  const ProcTimeModel m = DeterministicTicks{5};
  for (int i = 0; i < 100; ++i) ASSERT_EQ(sample_ticks(m, 3, 1.0, rng), 5);
}

TEST(SampleSeconds, GammaMeanMatchesFlowBalance) {
  // R(12) = 12 / (80 * 12 / 24) = 0.3 s; sd of the sample mean is (R / sqrt(alpha)) / sqrt(n).
  const ProcTimeModel m = GammaTime{ConvenientCurve::rational(80, 12), 4.0};
  auto rng = stream(7);
  const int n = 100000;
  const auto mo = moments(n, [&] { return sample_seconds(m, 12, rng); });
  EXPECT_NEAR(mo.mean, 0.3, 3 * (0.3 / 2) / std::sqrt(n));
}

TEST(SampleSeconds, LognormalMeanMatchesFlowBalance) {
  const ProcTimeModel m = LognormalTime{ConvenientCurve::exponential(100, 10), 0.5};
  auto rng = stream(8);
  const int n = 100000;
  const double r10 = 0.158197670686932642438500200511;  // mpmath
  const double se = r10 * std::sqrt(std::exp(0.25) - 1) / std::sqrt(n);
  const auto mo = moments(n, [&] { return sample_seconds(m, 10, rng); });
  EXPECT_NEAR(mo.mean, r10, 3 * se);
}

TEST(SampleSeconds, CurveModelsNeedAThread) {
  auto rng = stream(1);
  const ProcTimeModel m = GammaTime{ConvenientCurve::rational(80, 12), 4.0};
  EXPECT_THROW(sample_seconds(m, 0, rng), InvalidArgument);
  EXPECT_THROW(sample_ticks(m, 0, 1.0, rng), InvalidArgument);
}

TEST(SampleSeconds, TickModelsAreNotSampledInSeconds) {
  auto rng = stream(1);
  EXPECT_THROW(sample_seconds(UniformTicks{1, 3}, 1, rng), InvalidArgument);
  EXPECT_THROW(sample_seconds(DeterministicTicks{2}, 1, rng), InvalidArgument);
}

TEST(SecondsToTicks, ClampsToOneTick) { EXPECT_EQ(seconds_to_ticks(0.0004, 1.0), 1); }

TEST(SecondsToTicks, RoundsHalfUp) {
  EXPECT_EQ(seconds_to_ticks(0.1585, 1.0), 159);
  EXPECT_EQ(seconds_to_ticks(0.0025, 1.0), 3);
  EXPECT_EQ(seconds_to_ticks(0.0024, 1.0), 2);
  EXPECT_EQ(seconds_to_ticks(0.010, 2.0), 5);
  EXPECT_THROW(seconds_to_ticks(1.0, 0.0), InvalidArgument);
}

TEST(SampleTicks, UniformFrequencies) {
  const ProcTimeModel m = UniformTicks{1, 3};
  auto rng = stream(3);
  std::array<int, 4> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto t = sample_ticks(m, 1, 1.0, rng);
    ASSERT_GE(t, 1);
    ASSERT_LE(t, 3);
    counts[static_cast<std::size_t>(t)]++;
  }
  for (int k = 1; k <= 3; ++k) EXPECT_NEAR(counts[static_cast<std::size_t>(k)] / double(n), 1.0 / 3, 0.01);
}

TEST(ModelCheck, NamesTheBadParameter) {
  EXPECT_EQ(model_problem(GammaTime{ConvenientCurve::rational(1, 1), 0.0})->first, "alpha");
  EXPECT_EQ(model_problem(LognormalTime{ConvenientCurve::rational(1, 1), -1.0})->first, "sigma");
  EXPECT_EQ(model_problem(UniformTicks{0, 3})->first, "r_min");
  EXPECT_EQ(model_problem(UniformTicks{4, 3})->first, "r_max");
  EXPECT_EQ(model_problem(DeterministicTicks{0})->first, "ticks");
  EXPECT_FALSE(model_problem(DeterministicTicks{1}));
}

TEST(LognormalMu, MeanConstrainedLocation) {
  // ln 0.3 - 0.5^2 / 2, mpmath
  EXPECT_NEAR(lognormal_mu(0.3, 0.5), -1.32897280432593599262274621776, 1e-14);
}

// Random parameter sweeps.

namespace {

ConvenientCurve random_curve(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> bound(5.0, 500.0), shape(0.5, 50.0);
  std::bernoulli_distribution family(0.5);
  return family(gen) ? ConvenientCurve::exponential(bound(gen), shape(gen))
                     : ConvenientCurve::rational(bound(gen), shape(gen));
}

}  // namespace

TEST(SamplerProperties, GammaMeanAndVariance) {
  std::mt19937_64 gen(11);
  const int n = 100000;
  for (int trial = 0; trial < 6; ++trial) {
    const auto curve = random_curve(gen);
    const double alpha = std::uniform_real_distribution<double>(0.5, 10.0)(gen);
    const std::int64_t a = std::uniform_int_distribution<std::int64_t>(1, 64)(gen);
    const ProcTimeModel m = GammaTime{curve, alpha};
    auto rng = stream(100 + static_cast<std::uint64_t>(trial));
    const auto mo = moments(n, [&] { return sample_seconds(m, a, rng); });
    const double r = curve.mean_processing_time(static_cast<double>(a));
    const double theta = r / alpha;
    EXPECT_NEAR(mo.mean, r, 4 * std::sqrt(alpha) * theta / std::sqrt(n)) << "trial " << trial;
    EXPECT_NEAR(mo.variance / (alpha * theta * theta), 1.0, 0.10) << "trial " << trial;
  }
}

TEST(SamplerProperties, LognormalMeanAndVariance) {
  std::mt19937_64 gen(12);
  const int n = 100000;
  for (int trial = 0; trial < 6; ++trial) {
    const auto curve = random_curve(gen);
    const double sigma = std::uniform_real_distribution<double>(0.1, 0.8)(gen);
    const std::int64_t a = std::uniform_int_distribution<std::int64_t>(1, 64)(gen);
    const ProcTimeModel m = LognormalTime{curve, sigma};
    auto rng = stream(200 + static_cast<std::uint64_t>(trial));
    const auto mo = moments(n, [&] { return sample_seconds(m, a, rng); });
    const double r = curve.mean_processing_time(static_cast<double>(a));
    const double var = r * r * std::expm1(sigma * sigma);
    EXPECT_NEAR(mo.mean, r, 4 * std::sqrt(var / n)) << "trial " << trial;
    EXPECT_NEAR(mo.variance / var, 1.0, 0.10) << "trial " << trial;
  }
}

TEST(SamplerProperties, TicksNeverBelowOne) {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < 50; ++trial) {
    const ProcTimeModel m = LognormalTime{random_curve(gen), 1.5};
    auto rng = stream(static_cast<std::uint64_t>(trial));
    for (int i = 0; i < 2000; ++i) ASSERT_GE(sample_ticks(m, 1 + i % 8, 5.0, rng), 1);
  }
}

TEST(RngStream, SameIdSameSequence) {
  RngStream a(99, {3, StreamPurpose::arrivals});
  RngStream b(99, {3, StreamPurpose::arrivals});
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
  const ProcTimeModel m = GammaTime{ConvenientCurve::exponential(100, 10), 2.0};
  RngStream c(5, {1, StreamPurpose::processing_time});
  RngStream d(5, {1, StreamPurpose::processing_time});
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sample_ticks(m, 4, 1.0, c), sample_ticks(m, 4, 1.0, d));
}

TEST(RngStream, DistinctIdsDiffer) {
  RngStream a(99, {3, StreamPurpose::arrivals});
  RngStream b(99, {4, StreamPurpose::arrivals});
  RngStream c(99, {3, StreamPurpose::routing});
  RngStream d(100, {3, StreamPurpose::arrivals});
  int same_ab = 0, same_ac = 0, same_ad = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a();
    same_ab += x == b();
    same_ac += x == c();
    same_ad += x == d();
  }
  EXPECT_EQ(same_ab + same_ac + same_ad, 0);
}

TEST(RngStream, NeighbouringStreamsUncorrelated) {
  const int n = 100000;
  double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
  RngStream a(1, {0, StreamPurpose::processing_time});
  RngStream b(1, {1, StreamPurpose::processing_time});
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform(), y = b.uniform();
    sx += x, sy += y, sxy += x * y, sxx += x * x, syy += y * y;
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  EXPECT_LT(std::abs(corr), 4.0 / std::sqrt(n));
}

TEST(RngStream, BelowIsUniform) {
  RngStream rng(42, {});
  std::array<int, 7> counts{};
  const int n = 70000;
  for (int i = 0; i < n; ++i) counts[rng.below(7)]++;
  for (int c : counts) EXPECT_NEAR(c, n / 7.0, 4 * std::sqrt(n / 7.0));
}

TEST(PoissonVariate, MeanAndVariance) {
  for (double rate : {0.05, 3.0, 80.0}) {
    RngStream rng(17, {});
    const int n = 50000;
    const auto mo = moments(n, [&] { return static_cast<double>(poisson_variate(rng, rate)); });
    EXPECT_NEAR(mo.mean, rate, 4 * std::sqrt(rate / n)) << rate;
    EXPECT_NEAR(mo.variance / rate, 1.0, 0.05) << rate;
  }
}
