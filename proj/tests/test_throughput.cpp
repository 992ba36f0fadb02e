#include "etlsim/throughput.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

using etlsim::ConvenientCurve;
using etlsim::InvalidArgument;

namespace {

// Expected values below were computed with mpmath at 30 significant digits.
constexpr double kExp100k10At10 = 63.2120558828557678404476229839;
constexpr double kExp100k10R10 = 0.158197670686932642438500200511;

}  // namespace

TEST(ConvenientCurve, ExponentialStartsAtZero) {
  EXPECT_EQ(ConvenientCurve::exponential(100, 10).eval(0.0), 0.0);
  EXPECT_EQ(ConvenientCurve::rational(80, 12).eval(0.0), 0.0);
}

TEST(ConvenientCurve, ExponentialClosedForm) {
  EXPECT_NEAR(ConvenientCurve::exponential(100, 10).eval(10.0), kExp100k10At10, 1e-12);
}

TEST(ConvenientCurve, RationalHalfSaturation) {
  EXPECT_DOUBLE_EQ(ConvenientCurve::rational(80, 12).eval(12.0), 40.0);
}

TEST(ConvenientCurve, RejectsNegativeOrNonFiniteThreads) {
  const auto c = ConvenientCurve::exponential(100, 10);
  EXPECT_THROW(c.eval(-1.0), InvalidArgument);
  EXPECT_THROW(c.eval(std::numeric_limits<double>::infinity()), InvalidArgument);
  EXPECT_THROW(c.eval(std::nan("")), InvalidArgument);
}

TEST(ConvenientCurve, RejectsNonPositiveParameters) {
  EXPECT_THROW(ConvenientCurve::exponential(0, 10), InvalidArgument);
  EXPECT_THROW(ConvenientCurve::exponential(100, -1), InvalidArgument);
  EXPECT_THROW(ConvenientCurve::rational(80, 0), InvalidArgument);
  EXPECT_THROW(ConvenientCurve::rational(std::numeric_limits<double>::infinity(), 1), InvalidArgument);
}

TEST(ConvenientCurve, Supremum) {
  EXPECT_EQ(ConvenientCurve::exponential(100, 10).supremum(), 100.0);
  EXPECT_EQ(ConvenientCurve::rational(80, 12).supremum(), 80.0);
  EXPECT_EQ(ConvenientCurve::exponential(55.5, 3).supremum(), 55.5);
}

TEST(MeanProcessingTime, FlowBalanceExamples) {
  EXPECT_NEAR(ConvenientCurve::exponential(100, 10).mean_processing_time(10.0), kExp100k10R10, 1e-14);
  EXPECT_DOUBLE_EQ(ConvenientCurve::rational(80, 12).mean_processing_time(12.0), 0.3);
}

TEST(MeanProcessingTime, RationalLimitAtZeroIsShapeOverBound) {
  const auto c = ConvenientCurve::rational(80, 12);
  EXPECT_NEAR(c.mean_processing_time(1e-9), 12.0 / 80.0, 1e-10);
}

TEST(MeanProcessingTime, UndefinedAtZero) {
  EXPECT_THROW(ConvenientCurve::rational(80, 12).mean_processing_time(0.0), InvalidArgument);
  EXPECT_THROW(ConvenientCurve::exponential(1, 1).mean_processing_time(-3.0), InvalidArgument);
}

TEST(CheckConvenient, ExponentialGridIsConvenient) {
  std::vector<double> grid(1001);
  std::iota(grid.begin(), grid.end(), 0.0);
  const auto r = etlsim::check_convenient(ConvenientCurve::exponential(100, 10), grid);
  EXPECT_TRUE(r.monotone);
  EXPECT_TRUE(r.bounded);
  EXPECT_EQ(r.max_violation, 0.0);
}

TEST(CheckConvenient, DetectsDecrease) {
  const std::vector<std::pair<double, double>> grid{{0, 0}, {1, 5}, {2, 3}};
  const auto r = etlsim::check_convenient(std::span<const std::pair<double, double>>(grid), 10.0);
  EXPECT_FALSE(r.monotone);
  EXPECT_TRUE(r.bounded);
  EXPECT_DOUBLE_EQ(r.max_violation, 2.0);
}

TEST(CheckConvenient, RationalStaysStrictlyBelowBound) {
  const auto c = ConvenientCurve::rational(80, 12);
  std::vector<double> grid(10001);
  std::iota(grid.begin(), grid.end(), 0.0);
  EXPECT_TRUE(etlsim::check_convenient(c, grid).bounded);
  for (double a : grid) ASSERT_LT(c.eval(a), 80.0) << a;
}

TEST(CheckConvenient, RejectsUnsortedGrid) {
  const std::vector<std::pair<double, double>> grid{{2, 0}, {1, 1}};
  EXPECT_THROW(etlsim::check_convenient(std::span<const std::pair<double, double>>(grid), 1.0), InvalidArgument);
}

// Property tests over random parameters.
class CurveProperties : public ::testing::TestWithParam<etlsim::CurveFamily> {
 protected:
  std::mt19937_64 gen{20250101};
  ConvenientCurve random_curve() {
    std::uniform_real_distribution<double> log_bound(-1.0, 4.0);
    std::uniform_real_distribution<double> log_shape(-1.0, 3.0);
    return ConvenientCurve::make(GetParam(), std::pow(10.0, log_bound(gen)), std::pow(10.0, log_shape(gen)));
  }
  double random_a() { return std::uniform_real_distribution<double>(0.0, 1e4)(gen); }
};

TEST_P(CurveProperties, FlowBalanceIdentityWithinFourUlp) {
  for (int i = 0; i < 5000; ++i) {
    const auto c = random_curve();
    const double a = std::max(random_a(), 1e-6);
    const double product = c.eval(a) * c.mean_processing_time(a);
    const double ulp = std::nextafter(a, INFINITY) - a;
    ASSERT_LE(std::abs(product - a), 4 * ulp) << "a=" << a;
  }
}

TEST_P(CurveProperties, MonotoneAndBounded) {
  for (int i = 0; i < 5000; ++i) {
    const auto c = random_curve();
    double a1 = random_a();
    double a2 = random_a();
    if (a1 > a2) std::swap(a1, a2);
    ASSERT_LE(c.eval(a1), c.eval(a2));
    ASSERT_LE(c.eval(a2), c.supremum());
    // Strictly below the bound wherever the gap is representable.
    if (GetParam() == etlsim::CurveFamily::rational || a1 / c.shape() < 30.0) {
      ASSERT_LT(c.eval(a1), c.supremum());
    }
  }
}

TEST_P(CurveProperties, MeanProcessingTimeNonDecreasing) {
  for (int i = 0; i < 5000; ++i) {
    const auto c = random_curve();
    double a1 = std::max(random_a(), 1e-3);
    double a2 = std::max(random_a(), 1e-3);
    if (a1 > a2) std::swap(a1, a2);
    ASSERT_LE(c.mean_processing_time(a1), c.mean_processing_time(a2) * (1 + 1e-15));
  }
}

INSTANTIATE_TEST_SUITE_P(Families, CurveProperties,
                         ::testing::Values(etlsim::CurveFamily::exponential, etlsim::CurveFamily::rational),
                         [](const auto& info) { return std::string(etlsim::to_string(info.param)); });
