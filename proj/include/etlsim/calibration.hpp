#pragma once

// Calibration of throughput curves and processing-time distributions
// against observed data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "etlsim/error.hpp"
#include "etlsim/throughput.hpp"

namespace etlsim {

struct ThroughputObservation {
  double a = 0.0;      // threads
  double t_hat = 0.0;  // observed records per second
};

struct CurveFit {
  ConvenientCurve curve;
  double residual_sum_squares = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct CurveFitOptions {
  int max_iterations = 1000;
  double relative_rss_tolerance = 1e-10;
  double step_tolerance = 1e-9;  // in log-parameter space
  double initial_damping = 1e-3;
  double gradient_tolerance = 1e-6;  // on the cosine between residual and Jacobian columns
};

namespace detail {

struct CurvePoint {
  double value;
  double d_log_bound;
  double d_log_shape;
};

inline CurvePoint curve_point(CurveFamily family, double bound, double shape, double a) {
  if (family == CurveFamily::exponential) {
    const double decay = std::exp(-a / shape);
    const double f = -bound * std::expm1(-a / shape);
    return {f, f, -bound * decay * a / shape};
  }
  const double f = bound * a / (shape + a);
  return {f, f, -bound * a * shape / ((shape + a) * (shape + a))};
}

// First abscissa at which the data cross `level`, linearly interpolated
// from the previous point (or the origin).
inline double crossing(std::span<const ThroughputObservation> sorted, double level) {
  double prev_a = 0.0;
  double prev_t = 0.0;
  for (const auto& o : sorted) {
    if (o.t_hat > level) {
      if (o.t_hat == prev_t) return o.a;
      return prev_a + (level - prev_t) * (o.a - prev_a) / (o.t_hat - prev_t);
    }
    prev_a = o.a;
    prev_t = o.t_hat;
  }
  return sorted.back().a;
}

}  // namespace detail

// Unweighted least squares fit of a curve family by damped Gauss-Newton
// (Levenberg-Marquardt) over log-parameters, which keeps both parameters
// positive.
//
// Start: bound = 1.05 * max t_hat; shape = the a at which the data first
// exceed 63% (exponential) or 50% (rational) of that bound.
inline CurveFit fit_curve(std::span<const ThroughputObservation> observations, CurveFamily family,
                          const CurveFitOptions& options = {}) {
  if (observations.size() < 3) throw InvalidArgument("need >= 3 observations");
  std::vector<ThroughputObservation> data(observations.begin(), observations.end());
  for (const auto& o : data) {
    if (!std::isfinite(o.a) || !std::isfinite(o.t_hat) || o.a < 0.0 || o.t_hat < 0.0) {
      throw InvalidArgument("observations must be finite and >= 0");
    }
  }
  std::stable_sort(data.begin(), data.end(), [](const auto& l, const auto& r) { return l.a < r.a; });
  std::vector<double> distinct;
  for (const auto& o : data) {
    if (o.a > 0.0 && (distinct.empty() || distinct.back() != o.a)) distinct.push_back(o.a);
  }
  if (distinct.size() < 2) throw InvalidArgument("need >= 2 distinct thread counts > 0");
  const double t_max = std::max_element(data.begin(), data.end(), [](auto& l, auto& r) { return l.t_hat < r.t_hat; })->t_hat;
  if (!(t_max > 0.0)) throw InvalidArgument("degenerate data: all throughputs are zero");

  const double bound0 = 1.05 * t_max;
  const double level = (family == CurveFamily::exponential ? 0.63 : 0.5) * bound0;
  double shape0 = detail::crossing(data, level);
  if (!(shape0 > 0.0)) shape0 = distinct.front();

  constexpr double kLogLimit = 300.0;
  double p[2] = {std::log(bound0), std::log(shape0)};
  auto rss_at = [&](const double* q) {
    double s = 0.0;
    for (const auto& o : data) {
      const double r = o.t_hat - detail::curve_point(family, std::exp(q[0]), std::exp(q[1]), o.a).value;
      s += r * r;
    }
    return s;
  };

  double rss = rss_at(p);
  double lambda = options.initial_damping;
  int iterations = 0;
  bool stopped = false;
  double scale = 0.0;
  for (const auto& o : data) scale += o.t_hat * o.t_hat;

  while (iterations < options.max_iterations && !stopped) {
    double a00 = 0, a01 = 0, a11 = 0, g0 = 0, g1 = 0;
    for (const auto& o : data) {
      const auto c = detail::curve_point(family, std::exp(p[0]), std::exp(p[1]), o.a);
      const double r = o.t_hat - c.value;
      a00 += c.d_log_bound * c.d_log_bound;
      a01 += c.d_log_bound * c.d_log_shape;
      a11 += c.d_log_shape * c.d_log_shape;
      g0 += c.d_log_bound * r;
      g1 += c.d_log_shape * r;
    }
    // Inner loop: raise the damping until a step lowers the residual.
    for (;;) {
      ++iterations;
      const double m00 = a00 + lambda * std::max(a00, 1e-300);
      const double m11 = a11 + lambda * std::max(a11, 1e-300);
      const double det = m00 * m11 - a01 * a01;
      double step[2] = {0.0, 0.0};
      if (det != 0.0 && std::isfinite(det)) {
        step[0] = (m11 * g0 - a01 * g1) / det;
        step[1] = (m00 * g1 - a01 * g0) / det;
      }
      const double step_norm = std::max(std::abs(step[0]), std::abs(step[1]));
      // Clamp so that exp() of either parameter stays a positive finite double.
      const double trial[2] = {std::clamp(p[0] + step[0], -kLogLimit, kLogLimit),
                               std::clamp(p[1] + step[1], -kLogLimit, kLogLimit)};
      const double trial_rss = rss_at(trial);
      if (std::isfinite(trial_rss) && trial_rss < rss) {
        const double improvement = (rss - trial_rss) / rss;
        p[0] = trial[0];
        p[1] = trial[1];
        rss = trial_rss;
        lambda = std::max(lambda / 10.0, 1e-12);
        if (improvement < options.relative_rss_tolerance || step_norm < options.step_tolerance) stopped = true;
        break;
      }
      lambda *= 10.0;
      if (step_norm < options.step_tolerance || lambda > 1e16) {
        stopped = true;
        break;
      }
      if (iterations >= options.max_iterations) break;
    }
  }

  // Optimality: the residual is orthogonal to every Jacobian column, or the
  // fit is exact up to rounding.
  double norm_r = 0, n0 = 0, n1 = 0, g0 = 0, g1 = 0;
  for (const auto& o : data) {
    const auto c = detail::curve_point(family, std::exp(p[0]), std::exp(p[1]), o.a);
    const double r = o.t_hat - c.value;
    norm_r += r * r;
    n0 += c.d_log_bound * c.d_log_bound;
    n1 += c.d_log_shape * c.d_log_shape;
    g0 += c.d_log_bound * r;
    g1 += c.d_log_shape * r;
  }
  norm_r = std::sqrt(norm_r);
  const bool exact = norm_r <= 1e-12 * std::sqrt(scale);
  const bool orthogonal = std::abs(g0) <= options.gradient_tolerance * norm_r * std::sqrt(n0) &&
                          std::abs(g1) <= options.gradient_tolerance * norm_r * std::sqrt(n1);

  CurveFit fit{ConvenientCurve::make(family, std::exp(p[0]), std::exp(p[1])), rss, iterations, false};
  fit.converged = stopped && (exact || orthogonal);
  return fit;
}

struct GammaDistribution {
  double shape;
  double scale;

  double mean() const { return shape * scale; }
  double cdf(double x) const { return x <= 0.0 ? 0.0 : boost::math::gamma_p(shape, x / scale); }
  double log_pdf(double x) const {
    if (x <= 0.0) return -std::numeric_limits<double>::infinity();
    return (shape - 1.0) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale);
  }
  friend bool operator==(const GammaDistribution&, const GammaDistribution&) = default;
};

struct LognormalDistribution {
  double mu;
  double sigma;  // 0 means a point mass at exp(mu)

  double mean() const { return std::exp(mu + 0.5 * sigma * sigma); }
  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (sigma == 0.0) return std::log(x) >= mu ? 1.0 : 0.0;
    return 0.5 * std::erfc(-(std::log(x) - mu) / (sigma * std::numbers::sqrt2));
  }
  double log_pdf(double x) const {
    if (x <= 0.0) return -std::numeric_limits<double>::infinity();
    const double z = std::log(x) - mu;
    if (sigma == 0.0) return z == 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    return -std::log(x) - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi) - z * z / (2.0 * sigma * sigma);
  }
  friend bool operator==(const LognormalDistribution&, const LognormalDistribution&) = default;
};

using FittedDistribution = std::variant<GammaDistribution, LognormalDistribution>;

inline double distribution_mean(const FittedDistribution& d) {
  return std::visit([](const auto& x) { return x.mean(); }, d);
}

namespace detail {

inline void check_samples(std::span<const double> samples) {
  if (samples.size() < 10) throw InvalidArgument("need >= 10 samples");
  for (double x : samples) {
    if (!(std::isfinite(x) && x > 0.0)) throw InvalidArgument("samples must be positive");
  }
}

}  // namespace detail

// Method of moments: shape = mean^2 / variance, scale = variance / mean,
// with the unbiased sample variance.
inline GammaDistribution fit_gamma(std::span<const double> samples) {
  detail::check_samples(samples);
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (*lo == *hi) throw InvalidArgument("deterministic data");
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double variance = ss / (n - 1.0);
  if (!(variance > 0.0)) throw InvalidArgument("deterministic data");
  return {mean * mean / variance, variance / mean};
}

// Log-space maximum likelihood: mu and sigma are the mean and the
// (population) standard deviation of ln x.
inline LognormalDistribution fit_lognormal(std::span<const double> samples) {
  detail::check_samples(samples);
  const double n = static_cast<double>(samples.size());
  double mu = 0.0;
  for (double x : samples) mu += std::log(x);
  mu /= n;
  double ss = 0.0;
  for (double x : samples) {
    const double d = std::log(x) - mu;
    ss += d * d;
  }
  return {mu, std::sqrt(ss / n)};
}

struct GoodnessOfFit {
  double log_likelihood = 0.0;
  double ks_statistic = 0.0;  // sup |ECDF - model CDF|
};

inline GoodnessOfFit goodness_of_fit(std::span<const double> samples, const FittedDistribution& model) {
  if (samples.size() < 10) throw InvalidArgument("need >= 10 samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  GoodnessOfFit out;
  std::visit(
      [&](const auto& d) {
        for (std::size_t i = 0; i < sorted.size(); ++i) {
          const double f = d.cdf(sorted[i]);
          out.ks_statistic = std::max({out.ks_statistic, (static_cast<double>(i) + 1.0) / n - f,
                                       f - static_cast<double>(i) / n});
          out.log_likelihood += d.log_pdf(sorted[i]);
        }
      },
      model);
  return out;
}

}  // namespace etlsim
