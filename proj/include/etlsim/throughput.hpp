#pragma once

// Bounded, non-decreasing mean-throughput curves T(a) and the mean
// processing time R(a) = a / T(a) derived from them.

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "etlsim/error.hpp"

namespace etlsim {

enum class CurveFamily { exponential, rational };

constexpr std::string_view to_string(CurveFamily f) noexcept {
  return f == CurveFamily::exponential ? "exponential" : "rational";
}

// Mean throughput in records per second as a function of thread count.
//
//   exponential: bound * (1 - exp(-a / shape))   (bound = t_max, shape = k)
//   rational:    bound * a / (shape + a)         (bound = x,     shape = y)
//
// Both parameters are strictly positive and finite; the curve starts at 0,
// never decreases and stays strictly below `bound` for finite a.
class ConvenientCurve {
 public:
  static ConvenientCurve exponential(double t_max, double k) {
    return ConvenientCurve(CurveFamily::exponential, t_max, k);
  }
  static ConvenientCurve rational(double x, double y) {
    return ConvenientCurve(CurveFamily::rational, x, y);
  }
  static ConvenientCurve make(CurveFamily family, double bound, double shape) {
    return ConvenientCurve(family, bound, shape);
  }

  CurveFamily family() const noexcept { return family_; }
  // t_max or x
  double bound() const noexcept { return bound_; }
  // k or y, in threads
  double shape() const noexcept { return shape_; }

  double eval(double a) const {
    if (!std::isfinite(a) || a < 0.0) {
      throw InvalidArgument("thread count must be finite and >= 0");
    }
    if (family_ == CurveFamily::exponential) {
      return -bound_ * std::expm1(-a / shape_);
    }
    return bound_ * a / (shape_ + a);
  }

  double supremum() const noexcept { return bound_; }

  // Flow Balance: a = T(a) * R(a). Undefined at a = 0.
  double mean_processing_time(double a) const {
    if (!std::isfinite(a) || a <= 0.0) {
      throw InvalidArgument("mean processing time needs a > 0");
    }
    return a / eval(a);
  }

  friend bool operator==(const ConvenientCurve&, const ConvenientCurve&) = default;

 private:
  ConvenientCurve(CurveFamily family, double bound, double shape)
      : family_(family), bound_(bound), shape_(shape) {
    if (!(std::isfinite(bound) && bound > 0.0)) {
      throw InvalidArgument("curve bound must be finite and > 0");
    }
    if (!(std::isfinite(shape) && shape > 0.0)) {
      throw InvalidArgument("curve shape must be finite and > 0");
    }
  }

  CurveFamily family_;
  double bound_;
  double shape_;
};

struct ConvenienceReport {
  bool monotone = true;
  bool bounded = true;
  // Largest decrease between consecutive values, or largest excess over the
  // supremum, whichever is bigger. Zero for a clean grid.
  double max_violation = 0.0;
};

// Grid surrogate for membership in the space of convenient curves: values
// must never decrease and never exceed `supremum`. Tolerance is 1e-12 times
// the magnitude of the largest value (or of the supremum).
inline ConvenienceReport check_convenient(std::span<const std::pair<double, double>> grid,
                                          double supremum) {
  ConvenienceReport report;
  double scale = std::abs(supremum);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto [a, v] = grid[i];
    if (!std::isfinite(a) || a < 0.0) throw InvalidArgument("grid abscissae must be finite and >= 0");
    if (i > 0 && a < grid[i - 1].first) throw InvalidArgument("grid must be sorted by a");
    scale = std::max(scale, std::abs(v));
  }
  const double tol = 1e-12 * std::max(scale, 1.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i].second;
    if (i > 0) {
      const double drop = grid[i - 1].second - v;
      if (drop > tol) report.monotone = false;
      report.max_violation = std::max(report.max_violation, drop > tol ? drop : 0.0);
    }
    const double excess = v - supremum;
    if (!std::isfinite(v) || excess > tol) {
      report.bounded = false;
      report.max_violation = std::max(report.max_violation, std::isfinite(v) ? excess : INFINITY);
    }
  }
  return report;
}

// Convenience overload: samples `curve` over `abscissae` and checks it
// against its own supremum.
template <typename Range>
ConvenienceReport check_convenient(const ConvenientCurve& curve, const Range& abscissae) {
  std::vector<std::pair<double, double>> grid;
  for (double a : abscissae) grid.emplace_back(a, curve.eval(a));
  return check_convenient(std::span<const std::pair<double, double>>(grid), curve.supremum());
}

}  // namespace etlsim
