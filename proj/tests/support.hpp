#pragma once

// Scenario builders shared by the unit and acceptance suites.

#include <memory>
#include <random>
#include <string>

#include "etlsim/engine.hpp"

namespace etlsim::testing {

inline EdgeSpec make_edge(std::string id, std::string from, std::string to, ProcTimeModel e, ProcTimeModel t,
                          ProcTimeModel l, Capacity q_et = kDefaultQueueCapacity,
                          Capacity q_tl = kDefaultQueueCapacity) {
  EdgeSpec edge;
  edge.id = std::move(id);
  edge.from = std::move(from);
  edge.to = std::move(to);
  edge.extract = std::move(e);
  edge.transform = std::move(t);
  edge.load = std::move(l);
  edge.queue_et_capacity = q_et;
  edge.queue_tl_capacity = q_tl;
  return edge;
}

// S -> T through one edge.
inline ChainGraph single_edge(ProcTimeModel e, ProcTimeModel t, ProcTimeModel l, Capacity q_et = kDefaultQueueCapacity,
                              Capacity q_tl = kDefaultQueueCapacity, Capacity target_cap = {}) {
  ChainGraph g;
  g.pools = {{"S", PoolRole::source, {}}, {"T", PoolRole::target, target_cap}};
  g.edges = {make_edge("e1", "S", "T", std::move(e), std::move(t), std::move(l), q_et, q_tl)};
  return g;
}

// Fast E and L (one tick, many threads) around a stochastic T phase: the
// T phase is the only thing limiting throughput.
inline ChainGraph isolated_transform(ProcTimeModel transform) {
  return single_edge(DeterministicTicks{1}, std::move(transform), DeterministicTicks{1});
}

inline Allocation etl(const Topology& topo, std::int64_t e, std::int64_t t, std::int64_t l) {
  std::vector<std::int64_t> threads;
  for (std::size_t edge = 0; edge < topo.edge_count(); ++edge) {
    threads.insert(threads.end(), {e, t, l});
  }
  return Allocation(std::move(threads));
}

// Random valid chain with at most 5 pools and 6 edges, random capacities,
// models and arrivals. Layered so it is acyclic by construction.
struct RandomScenario {
  ChainGraph graph;
  ArrivalMap arrivals;
  Allocation allocation;
};

inline RandomScenario random_scenario(std::mt19937_64& gen) {
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); };
  auto coin = [&](double p) { return std::bernoulli_distribution(p)(gen); };
  auto capacity = [&](int lo, int hi) -> Capacity { return coin(0.4) ? Capacity{} : Capacity{uniform(lo, hi)}; };
  auto model = [&]() -> ProcTimeModel {
    switch (uniform(0, 3)) {
      case 0: return DeterministicTicks{uniform(1, 6)};
      case 1: {
        const int lo = uniform(1, 4);
        return UniformTicks{lo, lo + uniform(0, 6)};
      }
      case 2: return GammaTime{ConvenientCurve::rational(uniform(50, 800), uniform(1, 10)), 0.5 + uniform(0, 40) / 10.0};
      default: return LognormalTime{ConvenientCurve::exponential(uniform(50, 800), uniform(1, 10)), 0.1 + uniform(0, 10) / 10.0};
    }
  };

  RandomScenario s;
  auto& g = s.graph;
  g.routing_mode = coin(0.5) ? RoutingMode::race : RoutingMode::weighted;
  const int n_pools = uniform(2, 5);
  for (int i = 0; i < n_pools; ++i) {
    const auto role = i == 0 ? PoolRole::source : i == n_pools - 1 ? PoolRole::target : PoolRole::intermediate;
    g.pools.push_back({"p" + std::to_string(i), role, capacity(5, 200)});
  }
  // A backbone path through every pool, then extra forward edges up to 6.
  int e = 0;
  auto add = [&](int from, int to) {
    g.edges.push_back(make_edge("e" + std::to_string(e++), g.pools[static_cast<std::size_t>(from)].id,
                                g.pools[static_cast<std::size_t>(to)].id, model(), model(), model(), capacity(0, 8),
                                capacity(0, 8)));
  };
  for (int i = 0; i + 1 < n_pools; ++i) add(i, i + 1);
  const int extra = uniform(0, 6 - (n_pools - 1));
  for (int k = 0; k < extra; ++k) {
    const int from = uniform(0, n_pools - 2);
    add(from, uniform(from + 1, n_pools - 1));
  }
  if (g.routing_mode == RoutingMode::weighted && coin(0.5)) {
    for (const auto& pool : g.pools) {
      std::map<std::string, double> weights;
      for (const auto& edge : g.edges) {
        if (edge.from == pool.id) weights[edge.id] = 0.25 + uniform(0, 12) / 4.0;
      }
      if (weights.size() > 1) g.routing[pool.id] = weights;
    }
  }
  switch (uniform(0, 2)) {
    case 0: s.arrivals["p0"] = BatchArrivals{uniform(0, 400)}; break;
    case 1: s.arrivals["p0"] = DeterministicArrivals{uniform(1, 20)}; break;
    default: s.arrivals["p0"] = PoissonArrivals{uniform(1, 100) / 100.0}; break;
  }
  std::vector<std::int64_t> threads;
  for (std::size_t i = 0; i < 3 * g.edges.size(); ++i) threads.push_back(uniform(0, 6));
  s.allocation = Allocation(std::move(threads));
  return s;
}

}  // namespace etlsim::testing
