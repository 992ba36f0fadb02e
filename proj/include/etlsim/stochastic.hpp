#pragma once

// Per-record processing-time models. Curve-based variants draw seconds from
// a heavy-tailed law whose mean is pinned to R(a) = a / T(a); tick-based
// variants draw whole ticks directly.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <type_traits>
#include <variant>

#include "etlsim/error.hpp"
#include "etlsim/rng.hpp"
#include "etlsim/throughput.hpp"

namespace etlsim {

// Gamma(alpha, R(a) / alpha); mean R(a).
struct GammaTime {
  ConvenientCurve curve;
  double alpha;
  friend bool operator==(const GammaTime&, const GammaTime&) = default;
};

// Lognormal(ln R(a) - sigma^2 / 2, sigma^2); mean R(a).
struct LognormalTime {
  ConvenientCurve curve;
  double sigma;
  friend bool operator==(const LognormalTime&, const LognormalTime&) = default;
};

// Uniform on {r_min, ..., r_max} ticks, independent of the thread count.
struct UniformTicks {
  std::int64_t r_min;
  std::int64_t r_max;
  friend bool operator==(const UniformTicks&, const UniformTicks&) = default;
};

struct DeterministicTicks {
  std::int64_t ticks;
  friend bool operator==(const DeterministicTicks&, const DeterministicTicks&) = default;
};

using ProcTimeModel = std::variant<GammaTime, LognormalTime, UniformTicks, DeterministicTicks>;

constexpr std::string_view model_kind(const ProcTimeModel& m) noexcept {
  switch (m.index()) {
    case 0: return "gamma";
    case 1: return "lognormal";
    case 2: return "uniform_ticks";
    default: return "deterministic_ticks";
  }
}

inline bool is_curve_based(const ProcTimeModel& m) noexcept {
  return std::holds_alternative<GammaTime>(m) || std::holds_alternative<LognormalTime>(m);
}

// First parameter problem of a model as (field, message), if any.
inline std::optional<std::pair<std::string, std::string>> model_problem(const ProcTimeModel& model) {
  using Problem = std::optional<std::pair<std::string, std::string>>;
  return std::visit(
      [](const auto& m) -> Problem {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, GammaTime>) {
          if (!(std::isfinite(m.alpha) && m.alpha > 0.0)) return std::pair{"alpha", "must be > 0"};
        } else if constexpr (std::is_same_v<M, LognormalTime>) {
          if (!(std::isfinite(m.sigma) && m.sigma > 0.0)) return std::pair{"sigma", "must be > 0"};
        } else if constexpr (std::is_same_v<M, UniformTicks>) {
          if (m.r_min < 1) return std::pair{"r_min", "must be >= 1"};
          if (m.r_max < m.r_min) return std::pair{"r_max", "must be >= r_min"};
        } else {
          if (m.ticks < 1) return std::pair{"ticks", "must be >= 1"};
        }
        return std::nullopt;
      },
      model);
}

inline void check_model(const ProcTimeModel& model) {
  if (auto p = model_problem(model)) throw InvalidArgument(p->first + ": " + p->second);
}

struct GammaParams {
  double shape;
  double scale;
};

inline GammaParams gamma_params(const GammaTime& m, double a) {
  const double mean = m.curve.mean_processing_time(a);
  return {m.alpha, mean / m.alpha};
}

inline double lognormal_mu(double mean, double sigma) { return std::log(mean) - 0.5 * sigma * sigma; }

// Draws a processing time in seconds for a phase running `threads` threads.
// Only defined for the curve-based variants.
inline double sample_seconds(const ProcTimeModel& model, std::int64_t threads, RngStream& rng) {
  if (const auto* g = std::get_if<GammaTime>(&model)) {
    if (threads < 1) throw InvalidArgument("curve-based processing times need at least one thread");
    const auto p = gamma_params(*g, static_cast<double>(threads));
    return gamma_variate(rng, p.shape, p.scale);
  }
  if (const auto* l = std::get_if<LognormalTime>(&model)) {
    if (threads < 1) throw InvalidArgument("curve-based processing times need at least one thread");
    const double mean = l->curve.mean_processing_time(static_cast<double>(threads));
    return lognormal_variate(rng, lognormal_mu(mean, l->sigma), l->sigma);
  }
  throw InvalidArgument("tick-based models are sampled with sample_ticks");
}

// Nearest whole tick, ties upward, never below one tick.
inline std::int64_t seconds_to_ticks(double seconds, double tick_ms) {
  if (!(tick_ms > 0.0)) throw InvalidArgument("tick_ms must be > 0");
  const double ticks = std::floor(seconds * 1000.0 / tick_ms + 0.5);
  if (!(ticks >= 1.0)) return 1;
  if (ticks >= 9.0e18) return INT64_MAX;
  return static_cast<std::int64_t>(ticks);
}

inline std::int64_t sample_ticks(const ProcTimeModel& model, std::int64_t threads, double tick_ms,
                                 RngStream& rng) {
  if (!(tick_ms > 0.0)) throw InvalidArgument("tick_ms must be > 0");
  if (const auto* u = std::get_if<UniformTicks>(&model)) {
    const auto span = static_cast<std::uint64_t>(u->r_max - u->r_min) + 1;
    return u->r_min + static_cast<std::int64_t>(rng.below(span));
  }
  if (const auto* d = std::get_if<DeterministicTicks>(&model)) return d->ticks;
  return seconds_to_ticks(sample_seconds(model, threads, rng), tick_ms);
}

}  // namespace etlsim
