#pragma once

// Pools, ETL edges and the phase layout they expand into.
//
// Every pool is one phase. Every edge contributes five phases in the fixed
// order E, QueueET, T, QueueTL, L. Phase indices are dense: pools first in
// declaration order, then the five phases of each edge in declaration order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "etlsim/error.hpp"
#include "etlsim/stochastic.hpp"

namespace etlsim {

// Record capacity; std::nullopt means unbounded.
using Capacity = std::optional<std::int64_t>;

inline bool has_room(const Capacity& cap, std::size_t population) {
  return !cap || static_cast<std::int64_t>(population) < *cap;
}

enum class PoolRole { source, intermediate, target };

constexpr std::string_view to_string(PoolRole r) noexcept {
  switch (r) {
    case PoolRole::source: return "source";
    case PoolRole::intermediate: return "intermediate";
    default: return "target";
  }
}

struct PoolSpec {
  std::string id;
  PoolRole role = PoolRole::intermediate;
  Capacity capacity;

  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

inline constexpr std::int64_t kDefaultQueueCapacity = 16;

struct EdgeSpec {
  std::string id;
  std::string from;
  std::string to;
  ProcTimeModel extract = DeterministicTicks{1};
  ProcTimeModel transform = DeterministicTicks{1};
  ProcTimeModel load = DeterministicTicks{1};
  Capacity queue_et_capacity = kDefaultQueueCapacity;
  Capacity queue_tl_capacity = kDefaultQueueCapacity;

  friend bool operator==(const EdgeSpec&, const EdgeSpec&) = default;
};

// race: extractors of all outgoing edges compete for the pool's records.
// weighted: a record draws its outgoing edge from the pool's routing
// weights when it enters the pool.
enum class RoutingMode { race, weighted };

constexpr std::string_view to_string(RoutingMode m) noexcept {
  return m == RoutingMode::race ? "race" : "weighted";
}

struct ChainGraph {
  std::vector<PoolSpec> pools;
  std::vector<EdgeSpec> edges;
  RoutingMode routing_mode = RoutingMode::race;
  // pool id -> (outgoing edge id -> weight). Pools without an entry route
  // uniformly in weighted mode.
  std::map<std::string, std::map<std::string, double>> routing;

  friend bool operator==(const ChainGraph&, const ChainGraph&) = default;
};

enum class PhaseKind { pool, extract, queue_et, transform, queue_tl, load };

constexpr bool is_processing(PhaseKind k) noexcept {
  return k == PhaseKind::extract || k == PhaseKind::transform || k == PhaseKind::load;
}

constexpr bool is_queue(PhaseKind k) noexcept {
  return k == PhaseKind::queue_et || k == PhaseKind::queue_tl;
}

constexpr std::string_view phase_suffix(PhaseKind k) noexcept {
  switch (k) {
    case PhaseKind::extract: return "E";
    case PhaseKind::queue_et: return "QET";
    case PhaseKind::transform: return "T";
    case PhaseKind::queue_tl: return "QTL";
    case PhaseKind::load: return "L";
    default: return "";
  }
}

struct PhaseId {
  PhaseKind kind = PhaseKind::pool;
  // pool id for pool phases, edge id otherwise
  std::string owner;

  // "S" for pools, "e1.T" for edge phases.
  std::string name() const {
    if (kind == PhaseKind::pool) return owner;
    return owner + "." + std::string(phase_suffix(kind));
  }

  friend bool operator==(const PhaseId&, const PhaseId&) = default;
};

// Inverse of PhaseId::name for edge phases ("e1.E" -> {extract, "e1"}).
inline std::optional<PhaseId> parse_edge_phase_name(std::string_view name) {
  const auto dot = name.rfind('.');
  if (dot == std::string_view::npos || dot == 0) return std::nullopt;
  const auto suffix = name.substr(dot + 1);
  for (auto k : {PhaseKind::extract, PhaseKind::queue_et, PhaseKind::transform, PhaseKind::queue_tl,
                 PhaseKind::load}) {
    if (suffix == phase_suffix(k)) return PhaseId{k, std::string(name.substr(0, dot))};
  }
  return std::nullopt;
}

struct Violation {
  // e.g. "edges[0]", "pools[2]", "routing.A"
  std::string path;
  std::string message;

  std::string to_string() const { return path.empty() ? message : path + ": " + message; }
  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace detail {

inline std::optional<std::size_t> find_index(const std::unordered_map<std::string, std::size_t>& m,
                                             const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

inline bool valid_id(const std::string& id) { return !id.empty() && id.find('.') == std::string::npos; }

}  // namespace detail

// Checks every structural rule of a chain graph. Returns an empty list iff
// the graph is valid.
inline std::vector<Violation> validate(const ChainGraph& graph) {
  std::vector<Violation> out;
  auto report = [&](std::string path, std::string message) {
    out.push_back({std::move(path), std::move(message)});
  };

  std::unordered_map<std::string, std::size_t> pool_at;
  for (std::size_t i = 0; i < graph.pools.size(); ++i) {
    const auto& p = graph.pools[i];
    const auto path = "pools[" + std::to_string(i) + "]";
    if (!detail::valid_id(p.id)) report(path + ".id", "id must be non-empty and contain no '.'");
    if (!pool_at.emplace(p.id, i).second) report(path + ".id", "duplicate pool id " + p.id);
    if (p.capacity && *p.capacity < 1) report(path + ".capacity", "must be >= 1");
  }

  std::unordered_map<std::string, std::size_t> edge_at;
  // Edges whose endpoints resolve; only these take part in graph checks.
  std::vector<std::pair<std::size_t, std::size_t>> links(graph.edges.size(), {SIZE_MAX, SIZE_MAX});
  for (std::size_t i = 0; i < graph.edges.size(); ++i) {
    const auto& e = graph.edges[i];
    const auto path = "edges[" + std::to_string(i) + "]";
    if (!detail::valid_id(e.id)) report(path + ".id", "id must be non-empty and contain no '.'");
    if (!edge_at.emplace(e.id, i).second) report(path + ".id", "duplicate edge id " + e.id);
    if (pool_at.count(e.id) != 0) report(path + ".id", "edge id " + e.id + " collides with a pool id");
    const auto from = detail::find_index(pool_at, e.from);
    const auto to = detail::find_index(pool_at, e.to);
    if (!from) report(path + ".from", "unknown pool " + e.from);
    if (!to) report(path + ".to", "unknown pool " + e.to);
    if (e.from == e.to) report(path, "self-loop on " + e.from);
    if (e.queue_et_capacity && *e.queue_et_capacity < 0) report(path + ".queue_et_capacity", "must be >= 0");
    if (e.queue_tl_capacity && *e.queue_tl_capacity < 0) report(path + ".queue_tl_capacity", "must be >= 0");
    const std::pair<const char*, const ProcTimeModel*> models[] = {
        {"extract", &e.extract}, {"transform", &e.transform}, {"load", &e.load}};
    for (const auto& [name, model] : models) {
      if (auto problem = model_problem(*model)) {
        report(path + "." + name + "." + problem->first, problem->second);
      }
    }
    if (from && to && *from != *to) {
      links[i] = {*from, *to};
      if (graph.pools[*from].role == PoolRole::target) {
        report(path, "target pool " + e.from + " has outgoing edge " + e.id);
      }
      if (graph.pools[*to].role == PoolRole::source) {
        report(path, "source pool " + e.to + " has incoming edge " + e.id);
      }
    }
  }

  const std::size_t n = graph.pools.size();
  std::vector<std::vector<std::size_t>> out_adj(n), in_adj(n);
  for (const auto& [from, to] : links) {
    if (from == SIZE_MAX || from >= n || to >= n) continue;
    out_adj[from].push_back(to);
    in_adj[to].push_back(from);
  }

  // Cycle detection: iterative DFS with an explicit stack so the cycle can be
  // reported in traversal order.
  {
    enum class Mark { white, grey, black };
    std::vector<Mark> mark(n, Mark::white);
    for (std::size_t root = 0; root < n; ++root) {
      if (mark[root] != Mark::white) continue;
      std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
      mark[root] = Mark::grey;
      while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < out_adj[node].size()) {
          const std::size_t child = out_adj[node][next++];
          if (mark[child] == Mark::grey) {
            std::string cycle;
            bool on = false;
            for (const auto& frame : stack) {
              if (frame.first == child) on = true;
              if (on) cycle += (cycle.empty() ? "" : ",") + graph.pools[frame.first].id;
            }
            report("edges", "cycle: " + cycle);
          } else if (mark[child] == Mark::white) {
            mark[child] = Mark::grey;
            stack.emplace_back(child, 0);
          }
        } else {
          mark[node] = Mark::black;
          stack.pop_back();
        }
      }
    }
  }

  bool any_source = false;
  bool any_target = false;
  for (const auto& p : graph.pools) {
    any_source |= p.role == PoolRole::source;
    any_target |= p.role == PoolRole::target;
  }
  if (!any_source) report("pools", "no source pool");
  if (!any_target) report("pools", "no target pool");

  if (any_source && any_target) {
    auto sweep = [n](const std::vector<std::vector<std::size_t>>& adj, std::vector<std::size_t> frontier) {
      std::vector<bool> seen(n, false);
      for (auto f : frontier) seen[f] = true;
      while (!frontier.empty()) {
        const auto node = frontier.back();
        frontier.pop_back();
        for (auto next : adj[node]) {
          if (!seen[next]) {
            seen[next] = true;
            frontier.push_back(next);
          }
        }
      }
      return seen;
    };
    std::vector<std::size_t> sources, targets;
    for (std::size_t i = 0; i < n; ++i) {
      if (graph.pools[i].role == PoolRole::source) sources.push_back(i);
      if (graph.pools[i].role == PoolRole::target) targets.push_back(i);
    }
    const auto from_source = sweep(out_adj, sources);
    const auto to_target = sweep(in_adj, targets);
    for (std::size_t i = 0; i < n; ++i) {
      if (!from_source[i] || !to_target[i]) {
        report("pools[" + std::to_string(i) + "]", "pool " + graph.pools[i].id + " is not on any source-to-target path");
      }
    }
  }

  for (const auto& [pool, weights] : graph.routing) {
    const auto path = "routing." + pool;
    const auto at = detail::find_index(pool_at, pool);
    if (!at) {
      report(path, "unknown pool " + pool);
      continue;
    }
    std::vector<std::string> outgoing;
    for (const auto& e : graph.edges) {
      if (e.from == pool) outgoing.push_back(e.id);
    }
    double sum = 0.0;
    for (const auto& [edge, w] : weights) {
      if (std::find(outgoing.begin(), outgoing.end(), edge) == outgoing.end()) {
        report(path + "." + edge, "edge " + edge + " does not leave pool " + pool);
      }
      if (!(std::isfinite(w) && w >= 0.0)) report(path + "." + edge, "weight must be finite and >= 0");
      else sum += w;
    }
    for (const auto& e : outgoing) {
      if (weights.count(e) == 0) report(path, "missing weight for outgoing edge " + e);
    }
    if (!(sum > 0.0)) report(path, "weights must sum to a positive value");
  }
  return out;
}

namespace detail {

inline void require_valid(const ChainGraph& graph) {
  auto violations = validate(graph);
  if (violations.empty()) return;
  std::vector<std::string> problems;
  for (const auto& v : violations) problems.push_back(v.to_string());
  throw ScenarioError(std::move(problems));
}

}  // namespace detail

// A validated chain graph together with its dense phase layout and
// adjacency. Immutable once built.
class Topology {
 public:
  static constexpr std::size_t kPhasesPerEdge = 5;

  explicit Topology(ChainGraph graph) : graph_(std::move(graph)) {
    detail::require_valid(graph_);
    const std::size_t np = graph_.pools.size();
    for (std::size_t i = 0; i < np; ++i) pool_at_.emplace(graph_.pools[i].id, i);
    out_edges_.resize(np);
    in_edges_.resize(np);
    for (std::size_t e = 0; e < graph_.edges.size(); ++e) {
      edge_at_.emplace(graph_.edges[e].id, e);
      from_.push_back(pool_at_.at(graph_.edges[e].from));
      to_.push_back(pool_at_.at(graph_.edges[e].to));
      out_edges_[from_.back()].push_back(e);
      in_edges_[to_.back()].push_back(e);
    }
    for (const auto& p : graph_.pools) phases_.push_back({PhaseKind::pool, p.id});
    for (const auto& e : graph_.edges) {
      for (auto k : kEdgeOrder) phases_.push_back({k, e.id});
    }
    for (std::size_t i = 0; i < phases_.size(); ++i) name_at_.emplace(phases_[i].name(), i);
  }

  const ChainGraph& graph() const noexcept { return graph_; }
  const std::vector<PoolSpec>& pools() const noexcept { return graph_.pools; }
  const std::vector<EdgeSpec>& edges() const noexcept { return graph_.edges; }
  std::size_t pool_count() const noexcept { return graph_.pools.size(); }
  std::size_t edge_count() const noexcept { return graph_.edges.size(); }

  const std::vector<PhaseId>& phases() const noexcept { return phases_; }
  std::size_t phase_count() const noexcept { return phases_.size(); }
  std::size_t processing_phase_count() const noexcept { return 3 * edge_count(); }

  std::optional<std::size_t> find_pool(const std::string& id) const { return detail::find_index(pool_at_, id); }
  std::optional<std::size_t> find_edge(const std::string& id) const { return detail::find_index(edge_at_, id); }

  std::optional<std::size_t> find_phase(const PhaseId& phase) const { return find_phase(phase.name()); }
  std::optional<std::size_t> find_phase(const std::string& name) const {
    return detail::find_index(name_at_, name);
  }

  std::size_t pool_phase(std::size_t pool) const noexcept { return pool; }
  std::size_t edge_phase(std::size_t edge, PhaseKind kind) const noexcept {
    return pool_count() + kPhasesPerEdge * edge + offset(kind);
  }

  std::size_t edge_source(std::size_t edge) const noexcept { return from_[edge]; }
  std::size_t edge_target(std::size_t edge) const noexcept { return to_[edge]; }
  const std::vector<std::size_t>& outgoing(std::size_t pool) const noexcept { return out_edges_[pool]; }
  const std::vector<std::size_t>& incoming(std::size_t pool) const noexcept { return in_edges_[pool]; }

  // Phases a record may enter next. Admissibility is the engine's concern.
  std::vector<std::size_t> successors(std::size_t phase) const {
    if (phase >= phases_.size()) throw InvalidArgument("unknown phase index " + std::to_string(phase));
    if (phase < pool_count()) {
      std::vector<std::size_t> next;
      for (auto e : out_edges_[phase]) next.push_back(edge_phase(e, PhaseKind::extract));
      return next;
    }
    const std::size_t edge = (phase - pool_count()) / kPhasesPerEdge;
    const PhaseKind kind = phases_[phase].kind;
    if (kind == PhaseKind::load) return {pool_phase(to_[edge])};
    return {phase + 1};
  }

  // Processing phases (E, T, L of every edge) have dense ordinals
  // 3 * edge + {0, 1, 2}, used to key allocations.
  std::size_t processing_ordinal(std::size_t edge, PhaseKind kind) const noexcept {
    return 3 * edge + (kind == PhaseKind::extract ? 0 : kind == PhaseKind::transform ? 1 : 2);
  }
  std::size_t processing_phase(std::size_t ordinal) const noexcept {
    static constexpr PhaseKind kinds[] = {PhaseKind::extract, PhaseKind::transform, PhaseKind::load};
    return edge_phase(ordinal / 3, kinds[ordinal % 3]);
  }
  std::string processing_key(std::size_t ordinal) const { return phases_[processing_phase(ordinal)].name(); }
  std::optional<std::size_t> find_processing(const std::string& key) const {
    const auto phase = find_phase(key);
    if (!phase || *phase < pool_count() || !is_processing(phases_[*phase].kind)) return std::nullopt;
    const std::size_t edge = (*phase - pool_count()) / kPhasesPerEdge;
    return processing_ordinal(edge, phases_[*phase].kind);
  }

  const ProcTimeModel& model(std::size_t edge, PhaseKind kind) const noexcept {
    const auto& e = graph_.edges[edge];
    return kind == PhaseKind::extract ? e.extract : kind == PhaseKind::transform ? e.transform : e.load;
  }

 private:
  static constexpr PhaseKind kEdgeOrder[] = {PhaseKind::extract, PhaseKind::queue_et, PhaseKind::transform,
                                             PhaseKind::queue_tl, PhaseKind::load};

  static constexpr std::size_t offset(PhaseKind k) noexcept {
    switch (k) {
      case PhaseKind::extract: return 0;
      case PhaseKind::queue_et: return 1;
      case PhaseKind::transform: return 2;
      case PhaseKind::queue_tl: return 3;
      default: return 4;
    }
  }

  ChainGraph graph_;
  std::unordered_map<std::string, std::size_t> pool_at_;
  std::unordered_map<std::string, std::size_t> edge_at_;
  std::unordered_map<std::string, std::size_t> name_at_;
  std::vector<std::size_t> from_, to_;
  std::vector<std::vector<std::size_t>> out_edges_, in_edges_;
  std::vector<PhaseId> phases_;
};

// Dense phase ordering of a valid graph. Throws ScenarioError otherwise.
inline std::vector<PhaseId> expand_phases(const ChainGraph& graph) { return Topology(graph).phases(); }

// Next phase(s) of `phase` under the fixed pipeline order.
inline std::vector<PhaseId> successor_structure(const ChainGraph& graph, const PhaseId& phase) {
  const Topology topo(graph);
  const auto at = topo.find_phase(phase);
  if (!at || topo.phases()[*at] != phase) throw InvalidArgument("unknown phase " + phase.name());
  std::vector<PhaseId> out;
  for (auto s : topo.successors(*at)) out.push_back(topo.phases()[s]);
  return out;
}

}  // namespace etlsim
