#pragma once

// Fixed-increment simulation of an ETL chain as a controlled Markov process.
//
// The state is the (phase, remaining ticks) pair of every record. One call to
// Simulator::step advances the clock by exactly one tick:
//
//   1. arrivals into source pools (capacity-clipped, drops counted)
//   2. remaining ticks of every record in an E/T/L phase drop by one
//   3. movement sweep in four stages, edges visited in a random permutation
//      drawn once per tick:
//        a. L completions into the target pool
//        b. T completions into QueueTL (or straight into L when the queue
//           has capacity 0)
//        c. queue promotions QueueTL -> L and QueueET -> T, FIFO
//        d. E completions into QueueET (or straight into T), then free E
//           threads claim records from the source pool
//   4. the clock advances and window statistics accumulate
//
// A record that cannot move keeps holding its thread (blocking). Records make
// at most one move per tick; zero-capacity queues are transparent. Admission
// into a processing phase requires occupancy < allocated threads and draws
// the remaining ticks with that thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "etlsim/error.hpp"
#include "etlsim/rng.hpp"
#include "etlsim/stochastic.hpp"
#include "etlsim/topology.hpp"

namespace etlsim {

using Tick = std::int64_t;
using RecordId = std::int64_t;

inline constexpr std::size_t kNoRoute = SIZE_MAX;

// Thread count per processing phase, indexed by processing ordinal
// (3 * edge + {E, T, L}). Keys on the wire are "<edge>.<E|T|L>".
class Allocation {
 public:
  Allocation() = default;

  explicit Allocation(std::vector<std::int64_t> threads) : threads_(std::move(threads)) {
    for (auto t : threads_) {
      if (t < 0) throw InvalidArgument("thread counts must be >= 0");
    }
  }

  static Allocation uniform(const Topology& topo, std::int64_t threads) {
    return Allocation(std::vector<std::int64_t>(topo.processing_phase_count(), threads));
  }

  // Every processing phase must be named.
  static Allocation from_map(const Topology& topo, const std::map<std::string, std::int64_t>& keyed) {
    std::vector<std::int64_t> threads(topo.processing_phase_count(), -1);
    for (const auto& [key, value] : keyed) {
      const auto ordinal = topo.find_processing(key);
      if (!ordinal) throw InvalidArgument("unknown phase " + key);
      if (value < 0) throw InvalidArgument(key + ": thread count must be >= 0");
      threads[*ordinal] = value;
    }
    for (std::size_t i = 0; i < threads.size(); ++i) {
      if (threads[i] < 0) throw InvalidArgument("allocation missing phase " + topo.processing_key(i));
    }
    return Allocation(std::move(threads));
  }

  // Copy with the named phases replaced; other phases keep their value.
  Allocation patched(const Topology& topo, const std::map<std::string, std::int64_t>& keyed) const {
    auto threads = threads_;
    for (const auto& [key, value] : keyed) {
      const auto ordinal = topo.find_processing(key);
      if (!ordinal) throw InvalidArgument("unknown phase " + key);
      if (value < 0) throw InvalidArgument(key + ": thread count must be >= 0");
      threads.at(*ordinal) = value;
    }
    return Allocation(std::move(threads));
  }

  std::map<std::string, std::int64_t> to_map(const Topology& topo) const {
    std::map<std::string, std::int64_t> out;
    for (std::size_t i = 0; i < threads_.size(); ++i) out.emplace(topo.processing_key(i), threads_[i]);
    return out;
  }

  std::int64_t operator[](std::size_t ordinal) const { return threads_.at(ordinal); }
  std::size_t size() const noexcept { return threads_.size(); }
  const std::vector<std::int64_t>& threads() const noexcept { return threads_; }

  friend bool operator==(const Allocation&, const Allocation&) = default;

 private:
  std::vector<std::int64_t> threads_;
};

struct BatchArrivals {
  std::int64_t count = 0;  // injected at tick 0
  friend bool operator==(const BatchArrivals&, const BatchArrivals&) = default;
};
struct DeterministicArrivals {
  std::int64_t period = 1;  // one record every `period` ticks, starting at tick 0
  friend bool operator==(const DeterministicArrivals&, const DeterministicArrivals&) = default;
};
struct PoissonArrivals {
  double rate = 0.0;  // records per tick
  friend bool operator==(const PoissonArrivals&, const PoissonArrivals&) = default;
};
using ArrivalProcess = std::variant<BatchArrivals, DeterministicArrivals, PoissonArrivals>;

// source pool id -> arrival process
using ArrivalMap = std::map<std::string, ArrivalProcess>;

struct RecordState {
  RecordId id = 0;
  std::size_t phase = 0;
  Tick remaining = 0;
  std::size_t assigned_route = kNoRoute;  // edge index, weighted routing only
  Tick entered_source_at = 0;
  Tick entered_current_phase_at = 0;
  Tick moved_at = -1;  // tick of the last phase change; -1 for fresh arrivals

  friend bool operator==(const RecordState&, const RecordState&) = default;
};

struct PoolCounters {
  std::int64_t arrived = 0;  // external arrivals offered to a source pool
  std::int64_t dropped = 0;  // offered arrivals rejected by capacity
  std::int64_t entered = 0;  // records received from upstream L phases
  friend bool operator==(const PoolCounters&, const PoolCounters&) = default;
};

struct EdgeCounters {
  std::int64_t completed_E = 0;
  std::int64_t completed_T = 0;
  std::int64_t completed_L = 0;
  friend bool operator==(const EdgeCounters&, const EdgeCounters&) = default;
};

// Running sums for the window in progress; all integral so that window
// statistics are exact.
struct WindowAccumulator {
  Tick start = 0;
  std::vector<std::int64_t> population_sum;  // per phase, sampled after each tick
  std::vector<std::int64_t> blocked;         // per phase
  std::vector<std::int64_t> departures;      // per phase
  std::vector<std::int64_t> residence_sum;   // per phase, ticks spent by departed records
  std::vector<std::int64_t> entered;         // per pool, records received from upstream
  std::vector<Tick> latencies;               // source-to-target, per delivered record

  friend bool operator==(const WindowAccumulator&, const WindowAccumulator&) = default;
};

struct SimState {
  Tick tick = 0;
  std::vector<RecordState> records;  // indexed by id
  // Residents of each phase. Pools in weighted mode keep one FIFO lane per
  // outgoing edge; every other phase has a single lane.
  std::vector<std::vector<std::deque<RecordId>>> lanes;
  std::vector<std::size_t> population;  // per phase
  std::vector<PoolCounters> pool_counters;
  std::vector<EdgeCounters> edge_counters;
  std::vector<std::int64_t> blocked_thread_ticks;  // per phase, cumulative
  std::vector<RngStream> processing_rng;           // per processing ordinal
  std::vector<RngStream> arrival_rng;              // per pool
  std::vector<RngStream> routing_rng;              // per pool
  RngStream order_rng;
  WindowAccumulator window;

  std::size_t occupancy(std::size_t phase) const { return population.at(phase); }

  friend bool operator==(const SimState&, const SimState&) = default;
};

struct WindowMetrics {
  struct Delivered {
    std::string pool;
    std::int64_t records = 0;
    friend bool operator==(const Delivered&, const Delivered&) = default;
  };
  struct Processing {
    std::string phase;
    double mean_occupancy = 0.0;
    std::int64_t blocked_thread_ticks = 0;
    std::int64_t completed = 0;
    double mean_residence_ticks = 0.0;  // over records that left during the window
    friend bool operator==(const Processing&, const Processing&) = default;
  };
  struct Buffer {
    std::string id;
    bool is_queue = false;
    double mean_depth = 0.0;
    friend bool operator==(const Buffer&, const Buffer&) = default;
  };

  Tick start = 0;
  Tick end = 0;
  std::vector<Delivered> delivered;  // target pools, declaration order
  std::vector<Processing> processing;
  std::vector<Buffer> buffers;  // pools then queues
  std::int64_t latency_count = 0;
  double latency_p50 = 0.0;
  double latency_p95 = 0.0;

  std::int64_t total_delivered() const {
    std::int64_t n = 0;
    for (const auto& d : delivered) n += d.records;
    return n;
  }
  const Processing* find_processing(const std::string& phase) const {
    for (const auto& p : processing) {
      if (p.phase == phase) return &p;
    }
    return nullptr;
  }

  friend bool operator==(const WindowMetrics&, const WindowMetrics&) = default;
};

struct ScheduleEntry {
  Tick from_tick = 0;
  Allocation allocation;
};
using Schedule = std::vector<ScheduleEntry>;

namespace detail {

// Nearest-rank percentile of an unsorted sample.
inline double percentile(std::vector<Tick> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return static_cast<double>(values[rank - 1]);
}

}  // namespace detail

class Simulator {
 public:
  Simulator(std::shared_ptr<const Topology> topology, ArrivalMap arrivals, double tick_ms,
            std::uint64_t seed)
      : topo_(std::move(topology)), arrivals_(std::move(arrivals)), tick_ms_(tick_ms) {
    if (!topo_) throw InvalidArgument("simulator needs a topology");
    if (!(tick_ms_ > 0.0 && std::isfinite(tick_ms_))) throw InvalidArgument("tick_ms must be > 0");
    for (const auto& [pool, process] : arrivals_) {
      const auto at = topo_->find_pool(pool);
      if (!at) throw InvalidArgument("arrivals reference unknown pool " + pool);
      if (topo_->pools()[*at].role != PoolRole::source) {
        throw InvalidArgument("arrivals reference non-source pool " + pool);
      }
      std::visit(
          [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, BatchArrivals>) {
              if (p.count < 0) throw InvalidArgument("arrivals." + pool + ".count: must be >= 0");
            } else if constexpr (std::is_same_v<P, DeterministicArrivals>) {
              if (p.period < 1) throw InvalidArgument("arrivals." + pool + ".period: must be >= 1");
            } else {
              if (!(p.rate > 0.0 && std::isfinite(p.rate))) {
                throw InvalidArgument("arrivals." + pool + ".rate: must be > 0");
              }
            }
          },
          process);
      arrival_at_.emplace_back(*at, process);
    }
    lane_of_edge_.assign(topo_->edge_count(), 0);
    for (std::size_t p = 0; p < topo_->pool_count(); ++p) {
      const auto& out = topo_->outgoing(p);
      for (std::size_t j = 0; j < out.size(); ++j) lane_of_edge_[out[j]] = weighted() ? j : 0;
    }
    reset(seed);
  }

  Simulator(const ChainGraph& graph, ArrivalMap arrivals, double tick_ms, std::uint64_t seed)
      : Simulator(std::make_shared<const Topology>(graph), std::move(arrivals), tick_ms, seed) {}

  const Topology& topology() const noexcept { return *topo_; }
  std::shared_ptr<const Topology> topology_ptr() const noexcept { return topo_; }
  const SimState& state() const noexcept { return state_; }
  double tick_ms() const noexcept { return tick_ms_; }

  // Back to tick 0: batch arrivals materialized, counters cleared, RNG
  // streams re-derived from `seed`.
  void reset(std::uint64_t seed) {
    const auto& topo = *topo_;
    state_ = SimState{};
    const std::size_t nphase = topo.phase_count();
    state_.lanes.resize(nphase);
    for (std::size_t ph = 0; ph < nphase; ++ph) {
      const bool split = ph < topo.pool_count() && weighted() && topo.outgoing(ph).size() > 1;
      state_.lanes[ph].resize(split ? topo.outgoing(ph).size() : 1);
    }
    state_.population.assign(nphase, 0);
    state_.pool_counters.assign(topo.pool_count(), {});
    state_.edge_counters.assign(topo.edge_count(), {});
    state_.blocked_thread_ticks.assign(nphase, 0);
    for (std::size_t ord = 0; ord < topo.processing_phase_count(); ++ord) {
      state_.processing_rng.emplace_back(seed, StreamId{topo.processing_phase(ord), StreamPurpose::processing_time});
    }
    for (std::size_t p = 0; p < topo.pool_count(); ++p) {
      state_.arrival_rng.emplace_back(seed, StreamId{p, StreamPurpose::arrivals});
      state_.routing_rng.emplace_back(seed, StreamId{p, StreamPurpose::routing});
    }
    state_.order_rng = RngStream(seed, StreamId{0, StreamPurpose::edge_order});
    reset_window();
    for (const auto& [pool, process] : arrival_at_) {
      if (const auto* batch = std::get_if<BatchArrivals>(&process)) {
        for (std::int64_t i = 0; i < batch->count; ++i) offer_arrival(pool);
      }
    }
  }

  void step(const Allocation& allocation) {
    const auto& topo = *topo_;
    if (allocation.size() != topo.processing_phase_count()) {
      throw InvalidArgument("allocation missing phase keys: expected " +
                            std::to_string(topo.processing_phase_count()) + " entries, got " +
                            std::to_string(allocation.size()));
    }
    const Tick now = state_.tick;

    // 1. arrivals
    for (const auto& [pool, process] : arrival_at_) {
      if (const auto* det = std::get_if<DeterministicArrivals>(&process)) {
        if (now % det->period == 0) offer_arrival(pool);
      } else if (const auto* poisson = std::get_if<PoissonArrivals>(&process)) {
        const auto n = poisson_variate(state_.arrival_rng[pool], poisson->rate);
        for (std::uint64_t i = 0; i < n; ++i) offer_arrival(pool);
      }
    }

    // 2. decrement
    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
      for (auto kind : {PhaseKind::extract, PhaseKind::transform, PhaseKind::load}) {
        for (auto id : state_.lanes[topo.edge_phase(e, kind)][0]) {
          auto& r = state_.records[static_cast<std::size_t>(id)];
          if (r.remaining > 0) --r.remaining;
        }
      }
    }

    // 3. movement sweep
    order_.resize(topo.edge_count());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[state_.order_rng.below(i)]);
    }
    auto threads = [&](std::size_t e, PhaseKind k) { return allocation[topo.processing_ordinal(e, k)]; };
    auto has_thread = [&](std::size_t e, PhaseKind k) {
      return static_cast<std::int64_t>(state_.population[topo.edge_phase(e, k)]) < threads(e, k);
    };

    // a. L completions
    for (auto e : order_) {
      const auto target = topo.edge_target(e);
      complete(topo.edge_phase(e, PhaseKind::load), now, [&](RecordId id) {
        if (!has_room(topo.pools()[target].capacity, state_.population[target])) return false;
        state_.edge_counters[e].completed_L++;
        enter_pool(target, id, now);
        return true;
      });
    }

    // b. T completions
    for (auto e : order_) {
      const auto queue = topo.edge_phase(e, PhaseKind::queue_tl);
      const auto& cap = topo.edges()[e].queue_tl_capacity;
      complete(topo.edge_phase(e, PhaseKind::transform), now, [&](RecordId id) {
        if (cap && *cap == 0) {
          if (!has_thread(e, PhaseKind::load)) return false;
          admit(id, e, PhaseKind::load, threads(e, PhaseKind::load), now);
        } else {
          if (!has_room(cap, state_.population[queue])) return false;
          place(id, queue, now);
        }
        state_.edge_counters[e].completed_T++;
        return true;
      });
    }

    // c. queue promotions
    for (auto e : order_) {
      promote(e, PhaseKind::queue_tl, PhaseKind::load, threads(e, PhaseKind::load), now);
      promote(e, PhaseKind::queue_et, PhaseKind::transform, threads(e, PhaseKind::transform), now);
    }

    // d. E completions, then E admissions from the source pool
    for (auto e : order_) {
      const auto queue = topo.edge_phase(e, PhaseKind::queue_et);
      const auto& cap = topo.edges()[e].queue_et_capacity;
      complete(topo.edge_phase(e, PhaseKind::extract), now, [&](RecordId id) {
        if (cap && *cap == 0) {
          if (!has_thread(e, PhaseKind::transform)) return false;
          admit(id, e, PhaseKind::transform, threads(e, PhaseKind::transform), now);
        } else {
          if (!has_room(cap, state_.population[queue])) return false;
          place(id, queue, now);
        }
        state_.edge_counters[e].completed_E++;
        return true;
      });
      const auto source = topo.edge_source(e);
      auto& lane = state_.lanes[source][lane_of_edge_[e]];
      while (has_thread(e, PhaseKind::extract) && !lane.empty() &&
             state_.records[static_cast<std::size_t>(lane.front())].moved_at != now) {
        const RecordId id = lane.front();
        lane.pop_front();
        admit(id, e, PhaseKind::extract, threads(e, PhaseKind::extract), now);
      }
    }

    // 4. clock and window sums
    state_.tick = now + 1;
    for (std::size_t ph = 0; ph < state_.population.size(); ++ph) {
      state_.window.population_sum[ph] += static_cast<std::int64_t>(state_.population[ph]);
    }
  }

  // Statistics of the window accumulated since the last take_window().
  WindowMetrics snapshot_metrics() const {
    const auto& topo = *topo_;
    const auto& w = state_.window;
    WindowMetrics m;
    m.start = w.start;
    m.end = state_.tick;
    const double span = static_cast<double>(m.end - m.start);
    auto mean = [&](std::size_t ph) {
      return span > 0 ? static_cast<double>(w.population_sum[ph]) / span : 0.0;
    };
    for (std::size_t p = 0; p < topo.pool_count(); ++p) {
      if (topo.pools()[p].role == PoolRole::target) m.delivered.push_back({topo.pools()[p].id, w.entered[p]});
    }
    for (std::size_t ord = 0; ord < topo.processing_phase_count(); ++ord) {
      const auto ph = topo.processing_phase(ord);
      WindowMetrics::Processing stats;
      stats.phase = topo.phases()[ph].name();
      stats.mean_occupancy = mean(ph);
      stats.blocked_thread_ticks = w.blocked[ph];
      stats.completed = w.departures[ph];
      stats.mean_residence_ticks =
          w.departures[ph] > 0 ? static_cast<double>(w.residence_sum[ph]) / static_cast<double>(w.departures[ph]) : 0.0;
      m.processing.push_back(std::move(stats));
    }
    for (std::size_t p = 0; p < topo.pool_count(); ++p) m.buffers.push_back({topo.pools()[p].id, false, mean(p)});
    for (std::size_t e = 0; e < topo.edge_count(); ++e) {
      for (auto kind : {PhaseKind::queue_et, PhaseKind::queue_tl}) {
        const auto ph = topo.edge_phase(e, kind);
        m.buffers.push_back({topo.phases()[ph].name(), true, mean(ph)});
      }
    }
    m.latency_count = static_cast<std::int64_t>(w.latencies.size());
    m.latency_p50 = detail::percentile(w.latencies, 0.50);
    m.latency_p95 = detail::percentile(w.latencies, 0.95);
    return m;
  }

  // Closes the current window and starts the next one at the current tick.
  WindowMetrics take_window() {
    auto m = snapshot_metrics();
    reset_window();
    return m;
  }

  // Steps `n_ticks` times, applying at each tick the latest schedule entry
  // whose from_tick has been reached, and closes a window every `window`
  // ticks.
  std::vector<WindowMetrics> run(const Schedule& schedule, Tick n_ticks, Tick window) {
    if (schedule.empty()) throw InvalidArgument("action schedule is empty");
    if (schedule.front().from_tick > state_.tick) {
      throw InvalidArgument("action schedule starts after the current tick");
    }
    for (std::size_t i = 1; i < schedule.size(); ++i) {
      if (schedule[i].from_tick < schedule[i - 1].from_tick) {
        throw InvalidArgument("action schedule must be sorted by from_tick");
      }
    }
    if (n_ticks < 0) throw InvalidArgument("tick count must be >= 0");
    if (window < 1) throw InvalidArgument("window must be >= 1");
    std::vector<WindowMetrics> out;
    std::size_t entry = 0;
    for (Tick i = 0; i < n_ticks; ++i) {
      while (entry + 1 < schedule.size() && schedule[entry + 1].from_tick <= state_.tick) ++entry;
      step(schedule[entry].allocation);
      if (state_.tick - state_.window.start >= window) out.push_back(take_window());
    }
    return out;
  }

  std::vector<WindowMetrics> run(const Allocation& allocation, Tick n_ticks, Tick window) {
    return run(Schedule{{state_.tick, allocation}}, n_ticks, window);
  }

  // Consistency audit of the current state; empty when every bookkeeping
  // invariant holds.
  std::vector<std::string> check_invariants() const {
    std::vector<std::string> problems;
    const auto& topo = *topo_;
    std::int64_t arrived = 0;
    std::int64_t dropped = 0;
    for (const auto& c : state_.pool_counters) {
      arrived += c.arrived;
      dropped += c.dropped;
    }
    if (static_cast<std::int64_t>(state_.records.size()) != arrived - dropped) {
      problems.push_back("record count " + std::to_string(state_.records.size()) + " != arrived - dropped " +
                         std::to_string(arrived - dropped));
    }
    std::vector<int> seen(state_.records.size(), 0);
    std::size_t total = 0;
    for (std::size_t ph = 0; ph < topo.phase_count(); ++ph) {
      std::size_t count = 0;
      for (const auto& lane : state_.lanes[ph]) {
        for (auto id : lane) {
          ++count;
          if (id < 0 || static_cast<std::size_t>(id) >= seen.size()) {
            problems.push_back("unknown record id " + std::to_string(id));
            continue;
          }
          if (++seen[static_cast<std::size_t>(id)] > 1) problems.push_back("record " + std::to_string(id) + " duplicated");
          const auto& r = state_.records[static_cast<std::size_t>(id)];
          if (r.phase != ph) problems.push_back("record " + std::to_string(id) + " filed under wrong phase");
          if (!is_processing(topo.phases()[ph].kind) && r.remaining != 0) {
            problems.push_back("record " + std::to_string(id) + " has remaining time outside a processing phase");
          }
        }
      }
      if (count != state_.population[ph]) problems.push_back("population mismatch in " + topo.phases()[ph].name());
      total += count;
    }
    if (total != state_.records.size()) problems.push_back("records lost: " + std::to_string(state_.records.size() - total));
    return problems;
  }

 private:
  bool weighted() const noexcept { return topo_->graph().routing_mode == RoutingMode::weighted; }

  void reset_window() {
    const std::size_t nphase = topo_->phase_count();
    auto& w = state_.window;
    w.start = state_.tick;
    w.population_sum.assign(nphase, 0);
    w.blocked.assign(nphase, 0);
    w.departures.assign(nphase, 0);
    w.residence_sum.assign(nphase, 0);
    w.entered.assign(topo_->pool_count(), 0);
    w.latencies.clear();
  }

  std::size_t choose_route(std::size_t pool) {
    const auto& out = topo_->outgoing(pool);
    if (!weighted() || out.empty()) return kNoRoute;
    if (out.size() == 1) return out.front();
    const auto& routing = topo_->graph().routing;
    const auto it = routing.find(topo_->pools()[pool].id);
    std::vector<double> weights(out.size(), 1.0);
    if (it != routing.end()) {
      for (std::size_t j = 0; j < out.size(); ++j) weights[j] = it->second.at(topo_->edges()[out[j]].id);
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = state_.routing_rng[pool].uniform() * total;
    for (std::size_t j = 0; j < out.size(); ++j) {
      if (u < weights[j]) return out[j];
      u -= weights[j];
    }
    // rounding fell off the end; last edge with positive weight
    for (std::size_t j = out.size(); j-- > 0;) {
      if (weights[j] > 0.0) return out[j];
    }
    return out.back();
  }

  std::deque<RecordId>& lane_for(std::size_t phase, const RecordState& r) {
    auto& lanes = state_.lanes[phase];
    if (lanes.size() == 1) return lanes.front();
    return lanes[lane_of_edge_[r.assigned_route]];
  }

  void offer_arrival(std::size_t pool) {
    auto& counters = state_.pool_counters[pool];
    counters.arrived++;
    if (!has_room(topo_->pools()[pool].capacity, state_.population[pool])) {
      counters.dropped++;
      return;
    }
    RecordState r;
    r.id = static_cast<RecordId>(state_.records.size());
    r.phase = pool;
    r.entered_source_at = state_.tick;
    r.entered_current_phase_at = state_.tick;
    r.moved_at = -1;
    r.assigned_route = choose_route(pool);
    state_.records.push_back(r);
    lane_for(pool, state_.records.back()).push_back(r.id);
    state_.population[pool]++;
  }

  // Bookkeeping for a record leaving its current phase. Callers unlink it
  // from the lane first.
  void depart(RecordId id, Tick now) {
    const auto& r = state_.records[static_cast<std::size_t>(id)];
    state_.population[r.phase]--;
    state_.window.departures[r.phase]++;
    state_.window.residence_sum[r.phase] += now - r.entered_current_phase_at;
  }

  void place(RecordId id, std::size_t phase, Tick now) {
    auto& r = state_.records[static_cast<std::size_t>(id)];
    depart(id, now);
    r.phase = phase;
    r.remaining = 0;
    r.entered_current_phase_at = now;
    r.moved_at = now;
    lane_for(phase, r).push_back(id);
    state_.population[phase]++;
  }

  void admit(RecordId id, std::size_t edge, PhaseKind kind, std::int64_t threads, Tick now) {
    const auto ord = topo_->processing_ordinal(edge, kind);
    const auto phase = topo_->edge_phase(edge, kind);
    depart(id, now);
    auto& r = state_.records[static_cast<std::size_t>(id)];
    r.phase = phase;
    r.entered_current_phase_at = now;
    r.moved_at = now;
    r.remaining = sample_ticks(topo_->model(edge, kind), threads, tick_ms_, state_.processing_rng[ord]);
    state_.lanes[phase][0].push_back(id);
    state_.population[phase]++;
  }

  void enter_pool(std::size_t pool, RecordId id, Tick now) {
    auto& r = state_.records[static_cast<std::size_t>(id)];
    r.assigned_route = choose_route(pool);
    place(id, pool, now);
    state_.pool_counters[pool].entered++;
    state_.window.entered[pool]++;
    if (topo_->pools()[pool].role == PoolRole::target) {
      state_.window.latencies.push_back(now - r.entered_source_at);
    }
  }

  // Offers every finished record of a processing phase to `try_move`, in
  // admission order. Records that stay are blocked for this tick.
  template <typename F>
  void complete(std::size_t phase, Tick now, F&& try_move) {
    auto& lane = state_.lanes[phase][0];
    for (std::size_t i = 0; i < lane.size();) {
      const RecordId id = lane[i];
      const auto& r = state_.records[static_cast<std::size_t>(id)];
      if (r.remaining != 0 || r.moved_at == now) {
        ++i;
        continue;
      }
      lane.erase(lane.begin() + static_cast<std::ptrdiff_t>(i));
      if (!try_move(id)) {
        lane.insert(lane.begin() + static_cast<std::ptrdiff_t>(i), id);
        state_.blocked_thread_ticks[phase]++;
        state_.window.blocked[phase]++;
        ++i;
      }
    }
  }

  void promote(std::size_t edge, PhaseKind queue_kind, PhaseKind into, std::int64_t threads, Tick now) {
    const auto queue = topo_->edge_phase(edge, queue_kind);
    const auto phase = topo_->edge_phase(edge, into);
    auto& lane = state_.lanes[queue][0];
    while (!lane.empty() && static_cast<std::int64_t>(state_.population[phase]) < threads &&
           state_.records[static_cast<std::size_t>(lane.front())].moved_at != now) {
      const RecordId id = lane.front();
      lane.pop_front();
      admit(id, edge, into, threads, now);
    }
  }

  std::shared_ptr<const Topology> topo_;
  ArrivalMap arrivals_;
  std::vector<std::pair<std::size_t, ArrivalProcess>> arrival_at_;
  double tick_ms_;
  std::vector<std::size_t> lane_of_edge_;
  std::vector<std::size_t> order_;
  SimState state_;
};

}  // namespace etlsim
