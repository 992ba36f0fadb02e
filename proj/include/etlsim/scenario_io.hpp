#pragma once

// Scenario files (JSON), metrics output (JSONL / CSV) and calibration CSVs.
// The scenario schema is documented field by field in docs/scenario_format.md.

#include <charconv>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "etlsim/calibration.hpp"
#include "etlsim/engine.hpp"
#include "etlsim/error.hpp"
#include "etlsim/topology.hpp"

namespace etlsim {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

using AllocationMap = std::map<std::string, std::int64_t>;

// Partial allocation update taking effect at `from_tick`.
struct ScheduleChange {
  Tick from_tick = 0;
  AllocationMap allocation;
  friend bool operator==(const ScheduleChange&, const ScheduleChange&) = default;
};

struct ScenarioFile {
  int schema_version = kSchemaVersion;
  double tick_ms = 1.0;
  std::uint64_t seed = 0;
  ChainGraph graph;
  ArrivalMap arrivals;
  AllocationMap allocation;  // must name every processing phase
  std::vector<ScheduleChange> schedule;

  friend bool operator==(const ScenarioFile&, const ScenarioFile&) = default;
};

namespace detail {

// Walks a JSON document collecting positioned errors instead of stopping at
// the first one.
class JsonReader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& message) { errors.push_back(path + ": " + message); }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
  static std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

  bool expect_object(const Json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) {
      fail(path.empty() ? "<root>" : path, "expected an object");
      return false;
    }
    for (const auto& [key, value] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(join(path, key), "unknown field");
    }
    return true;
  }

  const Json* field(const Json& j, const std::string& path, const std::string& key, bool required = true) {
    const auto it = j.find(key);
    if (it == j.end()) {
      if (required) fail(join(path, key), "missing required field");
      return nullptr;
    }
    return &*it;
  }

  std::optional<std::string> string(const Json& j, const std::string& path) {
    if (!j.is_string()) {
      fail(path, "expected a string");
      return std::nullopt;
    }
    return j.get<std::string>();
  }

  std::optional<double> number(const Json& j, const std::string& path) {
    if (!j.is_number()) {
      fail(path, "expected a number");
      return std::nullopt;
    }
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
      fail(path, "must be finite");
      return std::nullopt;
    }
    return v;
  }

  std::optional<double> positive(const Json& j, const std::string& path) {
    auto v = number(j, path);
    if (v && !(*v > 0.0)) {
      fail(path, "must be > 0");
      return std::nullopt;
    }
    return v;
  }

  std::optional<std::int64_t> integer(const Json& j, const std::string& path, std::int64_t min) {
    if (!j.is_number_integer()) {
      fail(path, "expected an integer");
      return std::nullopt;
    }
    if (j.is_number_unsigned() && j.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
      fail(path, "out of range");
      return std::nullopt;
    }
    const auto v = j.get<std::int64_t>();
    if (v < min) {
      fail(path, "must be >= " + std::to_string(min));
      return std::nullopt;
    }
    return v;
  }

  // Integer >= min, or the string "unbounded".
  std::optional<Capacity> capacity(const Json& j, const std::string& path, std::int64_t min) {
    if (j.is_string() && j.get<std::string>() == "unbounded") return Capacity{};
    if (j.is_string()) {
      fail(path, "expected an integer or \"unbounded\"");
      return std::nullopt;
    }
    auto v = integer(j, path, min);
    if (!v) return std::nullopt;
    return Capacity{*v};
  }

  std::optional<ConvenientCurve> curve(const Json& j, const std::string& path) {
    if (!j.is_object()) {
      fail(path, "expected an object");
      return std::nullopt;
    }
    const auto* family = field(j, path, "family");
    if (!family) return std::nullopt;
    const auto name = string(*family, join(path, "family"));
    if (!name) return std::nullopt;
    std::string bound_key, shape_key;
    CurveFamily kind;
    if (*name == "exponential") {
      kind = CurveFamily::exponential;
      bound_key = "t_max";
      shape_key = "k";
    } else if (*name == "rational") {
      kind = CurveFamily::rational;
      bound_key = "x";
      shape_key = "y";
    } else {
      fail(join(path, "family"), "expected \"exponential\" or \"rational\"");
      return std::nullopt;
    }
    expect_object(j, path, {"family", bound_key, shape_key});
    const auto* b = field(j, path, bound_key);
    const auto* s = field(j, path, shape_key);
    std::optional<double> bv, sv;
    if (b) bv = positive(*b, join(path, bound_key));
    if (s) sv = positive(*s, join(path, shape_key));
    if (!bv || !sv) return std::nullopt;
    return ConvenientCurve::make(kind, *bv, *sv);
  }

  std::optional<ProcTimeModel> model(const Json& j, const std::string& path) {
    if (!j.is_object()) {
      fail(path, "expected an object");
      return std::nullopt;
    }
    const auto* kind_j = field(j, path, "kind");
    if (!kind_j) return std::nullopt;
    const auto kind = string(*kind_j, join(path, "kind"));
    if (!kind) return std::nullopt;
    if (*kind == "gamma" || *kind == "lognormal") {
      const std::string param = *kind == "gamma" ? "alpha" : "sigma";
      expect_object(j, path, {"kind", "curve", param});
      const auto* c = field(j, path, "curve");
      const auto* p = field(j, path, param);
      std::optional<ConvenientCurve> cv;
      std::optional<double> pv;
      if (c) cv = curve(*c, join(path, "curve"));
      if (p) pv = positive(*p, join(path, param));
      if (!cv || !pv) return std::nullopt;
      if (*kind == "gamma") return GammaTime{*cv, *pv};
      return LognormalTime{*cv, *pv};
    }
    if (*kind == "uniform_ticks") {
      expect_object(j, path, {"kind", "r_min", "r_max"});
      const auto* lo = field(j, path, "r_min");
      const auto* hi = field(j, path, "r_max");
      std::optional<std::int64_t> lv, hv;
      if (lo) lv = integer(*lo, join(path, "r_min"), 1);
      if (hi) hv = integer(*hi, join(path, "r_max"), 1);
      if (!lv || !hv) return std::nullopt;
      if (*hv < *lv) {
        fail(join(path, "r_max"), "must be >= r_min");
        return std::nullopt;
      }
      return UniformTicks{*lv, *hv};
    }
    if (*kind == "deterministic_ticks") {
      expect_object(j, path, {"kind", "ticks"});
      const auto* t = field(j, path, "ticks");
      if (!t) return std::nullopt;
      const auto tv = integer(*t, join(path, "ticks"), 1);
      if (!tv) return std::nullopt;
      return DeterministicTicks{*tv};
    }
    fail(join(path, "kind"), "expected one of gamma, lognormal, uniform_ticks, deterministic_ticks");
    return std::nullopt;
  }

  std::optional<AllocationMap> allocation(const Json& j, const std::string& path) {
    if (!j.is_object()) {
      fail(path, "expected an object");
      return std::nullopt;
    }
    AllocationMap out;
    bool ok = true;
    for (const auto& [key, value] : j.items()) {
      const auto v = integer(value, join(path, key), 0);
      if (v) out.emplace(key, *v);
      else ok = false;
    }
    if (!ok) return std::nullopt;
    return out;
  }
};

inline std::string position_of(std::string_view text, std::size_t byte) {
  std::size_t line = 1, column = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

}  // namespace detail

// Cross-reference checks for an allocation map against a topology. Returns
// one message per problem, prefixed with `path`.
inline std::vector<std::string> check_allocation_keys(const Topology& topo, const AllocationMap& alloc,
                                                      const std::string& path, bool require_all) {
  std::vector<std::string> problems;
  for (const auto& [key, value] : alloc) {
    if (!topo.find_processing(key)) problems.push_back(path + "." + key + ": unknown phase");
  }
  if (require_all) {
    for (std::size_t ord = 0; ord < topo.processing_phase_count(); ++ord) {
      if (alloc.count(topo.processing_key(ord)) == 0) {
        problems.push_back(path + ": missing phase " + topo.processing_key(ord));
      }
    }
  }
  return problems;
}

// Parses and fully validates a scenario. Throws ScenarioError listing every
// problem found, each prefixed with the path of the offending field.
inline ScenarioFile parse_scenario(std::string_view text) {
  Json root;
  try {
    root = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ScenarioError({detail::position_of(text, e.byte > 0 ? e.byte - 1 : 0) + ": malformed JSON: " + e.what()});
  }

  detail::JsonReader in;
  ScenarioFile s;
  if (!in.expect_object(root, "", {"schema_version", "tick_ms", "seed", "routing_mode", "pools", "edges", "routing",
                                   "arrivals", "allocation", "schedule"})) {
    throw ScenarioError(in.errors);
  }

  if (const auto* v = in.field(root, "", "schema_version")) {
    if (auto n = in.integer(*v, "schema_version", 1)) {
      if (*n != kSchemaVersion) in.fail("schema_version", "unsupported version " + std::to_string(*n));
      s.schema_version = static_cast<int>(*n);
    }
  }
  if (const auto* v = in.field(root, "", "tick_ms")) {
    if (auto t = in.positive(*v, "tick_ms")) s.tick_ms = *t;
  }
  if (const auto* v = in.field(root, "", "seed")) {
    if (v->is_number_unsigned()) s.seed = v->get<std::uint64_t>();
    else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) s.seed = static_cast<std::uint64_t>(v->get<std::int64_t>());
    else in.fail("seed", "expected a non-negative 64-bit integer");
  }
  if (const auto* v = in.field(root, "", "routing_mode", false)) {
    if (auto m = in.string(*v, "routing_mode")) {
      if (*m == "race") s.graph.routing_mode = RoutingMode::race;
      else if (*m == "weighted") s.graph.routing_mode = RoutingMode::weighted;
      else in.fail("routing_mode", "expected \"race\" or \"weighted\"");
    }
  }

  if (const auto* pools = in.field(root, "", "pools")) {
    if (!pools->is_array()) {
      in.fail("pools", "expected an array");
    } else {
      for (std::size_t i = 0; i < pools->size(); ++i) {
        const auto path = detail::JsonReader::index("pools", i);
        const auto& pj = (*pools)[i];
        if (!in.expect_object(pj, path, {"id", "role", "capacity"})) continue;
        PoolSpec pool;
        if (const auto* id = in.field(pj, path, "id")) {
          if (auto v = in.string(*id, path + ".id")) pool.id = *v;
        }
        if (const auto* role = in.field(pj, path, "role")) {
          if (auto v = in.string(*role, path + ".role")) {
            if (*v == "source") pool.role = PoolRole::source;
            else if (*v == "intermediate") pool.role = PoolRole::intermediate;
            else if (*v == "target") pool.role = PoolRole::target;
            else in.fail(path + ".role", "expected source, intermediate or target");
          }
        }
        if (const auto* cap = in.field(pj, path, "capacity", false)) {
          if (auto c = in.capacity(*cap, path + ".capacity", 1)) pool.capacity = *c;
        }
        s.graph.pools.push_back(std::move(pool));
      }
    }
  }

  if (const auto* edges = in.field(root, "", "edges")) {
    if (!edges->is_array()) {
      in.fail("edges", "expected an array");
    } else {
      for (std::size_t i = 0; i < edges->size(); ++i) {
        const auto path = detail::JsonReader::index("edges", i);
        const auto& ej = (*edges)[i];
        if (!in.expect_object(ej, path, {"id", "from", "to", "extract", "transform", "load", "queue_et_capacity",
                                         "queue_tl_capacity"})) {
          continue;
        }
        EdgeSpec edge;
        for (auto [key, target] : {std::pair{"id", &edge.id}, std::pair{"from", &edge.from}, std::pair{"to", &edge.to}}) {
          if (const auto* v = in.field(ej, path, key)) {
            if (auto str = in.string(*v, path + "." + key)) *target = *str;
          }
        }
        for (auto [key, target] : {std::pair{"extract", &edge.extract}, std::pair{"transform", &edge.transform},
                                   std::pair{"load", &edge.load}}) {
          if (const auto* v = in.field(ej, path, key)) {
            if (auto m = in.model(*v, path + "." + key)) *target = *m;
          }
        }
        for (auto [key, target] : {std::pair{"queue_et_capacity", &edge.queue_et_capacity},
                                   std::pair{"queue_tl_capacity", &edge.queue_tl_capacity}}) {
          if (const auto* v = in.field(ej, path, key, false)) {
            if (auto c = in.capacity(*v, path + "." + key, 0)) *target = *c;
          }
        }
        s.graph.edges.push_back(std::move(edge));
      }
    }
  }

  if (const auto* routing = in.field(root, "", "routing", false)) {
    if (!routing->is_object()) {
      in.fail("routing", "expected an object");
    } else {
      for (const auto& [pool, weights] : routing->items()) {
        const auto path = "routing." + pool;
        if (!weights.is_object()) {
          in.fail(path, "expected an object");
          continue;
        }
        auto& out = s.graph.routing[pool];
        for (const auto& [edge, w] : weights.items()) {
          if (auto v = in.number(w, path + "." + edge)) out[edge] = *v;
        }
      }
    }
  }

  if (const auto* arrivals = in.field(root, "", "arrivals", false)) {
    if (!arrivals->is_object()) {
      in.fail("arrivals", "expected an object");
    } else {
      for (const auto& [pool, aj] : arrivals->items()) {
        const auto path = "arrivals." + pool;
        if (!aj.is_object()) {
          in.fail(path, "expected an object");
          continue;
        }
        const auto* kind_j = in.field(aj, path, "kind");
        if (!kind_j) continue;
        const auto kind = in.string(*kind_j, path + ".kind");
        if (!kind) continue;
        if (*kind == "batch") {
          in.expect_object(aj, path, {"kind", "count"});
          if (const auto* c = in.field(aj, path, "count")) {
            if (auto n = in.integer(*c, path + ".count", 0)) s.arrivals[pool] = BatchArrivals{*n};
          }
        } else if (*kind == "deterministic_rate") {
          in.expect_object(aj, path, {"kind", "period"});
          if (const auto* p = in.field(aj, path, "period")) {
            if (auto n = in.integer(*p, path + ".period", 1)) s.arrivals[pool] = DeterministicArrivals{*n};
          }
        } else if (*kind == "poisson") {
          in.expect_object(aj, path, {"kind", "rate"});
          if (const auto* r = in.field(aj, path, "rate")) {
            if (auto v = in.positive(*r, path + ".rate")) s.arrivals[pool] = PoissonArrivals{*v};
          }
        } else {
          in.fail(path + ".kind", "expected batch, deterministic_rate or poisson");
        }
      }
    }
  }

  if (const auto* alloc = in.field(root, "", "allocation")) {
    if (auto a = in.allocation(*alloc, "allocation")) s.allocation = *a;
  }

  if (const auto* schedule = in.field(root, "", "schedule", false)) {
    if (!schedule->is_array()) {
      in.fail("schedule", "expected an array");
    } else {
      for (std::size_t i = 0; i < schedule->size(); ++i) {
        const auto path = detail::JsonReader::index("schedule", i);
        const auto& cj = (*schedule)[i];
        if (!in.expect_object(cj, path, {"from_tick", "allocation"})) continue;
        ScheduleChange change;
        if (const auto* t = in.field(cj, path, "from_tick")) {
          if (auto v = in.integer(*t, path + ".from_tick", 0)) change.from_tick = *v;
        }
        if (const auto* a = in.field(cj, path, "allocation")) {
          if (auto v = in.allocation(*a, path + ".allocation")) change.allocation = *v;
        }
        if (!s.schedule.empty() && change.from_tick < s.schedule.back().from_tick) {
          in.fail(path + ".from_tick", "schedule must be sorted by from_tick");
        }
        s.schedule.push_back(std::move(change));
      }
    }
  }

  if (!in.errors.empty()) throw ScenarioError(in.errors);

  // Semantic checks need a well-formed document.
  std::vector<std::string> problems;
  for (const auto& v : validate(s.graph)) problems.push_back(v.to_string());
  if (!problems.empty()) throw ScenarioError(problems);

  const Topology topo(s.graph);
  for (const auto& [pool, process] : s.arrivals) {
    const auto at = topo.find_pool(pool);
    if (!at) problems.push_back("arrivals." + pool + ": unknown pool " + pool);
    else if (topo.pools()[*at].role != PoolRole::source) problems.push_back("arrivals." + pool + ": not a source pool");
  }
  for (auto& p : check_allocation_keys(topo, s.allocation, "allocation", true)) problems.push_back(std::move(p));
  for (std::size_t i = 0; i < s.schedule.size(); ++i) {
    for (auto& p : check_allocation_keys(topo, s.schedule[i].allocation,
                                         detail::JsonReader::index("schedule", i) + ".allocation", false)) {
      problems.push_back(std::move(p));
    }
  }
  if (!problems.empty()) throw ScenarioError(problems);
  return s;
}

namespace detail {

inline Json capacity_json(const Capacity& c) { return c ? Json(*c) : Json("unbounded"); }

inline Json curve_json(const ConvenientCurve& c) {
  Json j;
  j["family"] = std::string(to_string(c.family()));
  if (c.family() == CurveFamily::exponential) {
    j["t_max"] = c.bound();
    j["k"] = c.shape();
  } else {
    j["x"] = c.bound();
    j["y"] = c.shape();
  }
  return j;
}

inline Json model_json(const ProcTimeModel& m) {
  Json j;
  j["kind"] = std::string(model_kind(m));
  std::visit(
      [&](const auto& v) {
        using M = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<M, GammaTime>) {
          j["curve"] = curve_json(v.curve);
          j["alpha"] = v.alpha;
        } else if constexpr (std::is_same_v<M, LognormalTime>) {
          j["curve"] = curve_json(v.curve);
          j["sigma"] = v.sigma;
        } else if constexpr (std::is_same_v<M, UniformTicks>) {
          j["r_min"] = v.r_min;
          j["r_max"] = v.r_max;
        } else {
          j["ticks"] = v.ticks;
        }
      },
      m);
  return j;
}

inline Json allocation_json(const AllocationMap& a) {
  Json j = Json::object();
  for (const auto& [k, v] : a) j[k] = v;
  return j;
}

}  // namespace detail

// Canonical form: fixed field order, every optional field written out,
// shortest round-trip number formatting.
inline Json scenario_to_json(const ScenarioFile& s) {
  Json j;
  j["schema_version"] = s.schema_version;
  j["tick_ms"] = s.tick_ms;
  j["seed"] = s.seed;
  j["routing_mode"] = std::string(to_string(s.graph.routing_mode));
  j["pools"] = Json::array();
  for (const auto& p : s.graph.pools) {
    Json pj;
    pj["id"] = p.id;
    pj["role"] = std::string(to_string(p.role));
    pj["capacity"] = detail::capacity_json(p.capacity);
    j["pools"].push_back(std::move(pj));
  }
  j["edges"] = Json::array();
  for (const auto& e : s.graph.edges) {
    Json ej;
    ej["id"] = e.id;
    ej["from"] = e.from;
    ej["to"] = e.to;
    ej["extract"] = detail::model_json(e.extract);
    ej["transform"] = detail::model_json(e.transform);
    ej["load"] = detail::model_json(e.load);
    ej["queue_et_capacity"] = detail::capacity_json(e.queue_et_capacity);
    ej["queue_tl_capacity"] = detail::capacity_json(e.queue_tl_capacity);
    j["edges"].push_back(std::move(ej));
  }
  j["routing"] = Json::object();
  for (const auto& [pool, weights] : s.graph.routing) {
    Json wj = Json::object();
    for (const auto& [edge, w] : weights) wj[edge] = w;
    j["routing"][pool] = std::move(wj);
  }
  j["arrivals"] = Json::object();
  for (const auto& [pool, process] : s.arrivals) {
    Json aj;
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, BatchArrivals>) {
            aj["kind"] = "batch";
            aj["count"] = p.count;
          } else if constexpr (std::is_same_v<P, DeterministicArrivals>) {
            aj["kind"] = "deterministic_rate";
            aj["period"] = p.period;
          } else {
            aj["kind"] = "poisson";
            aj["rate"] = p.rate;
          }
        },
        process);
    j["arrivals"][pool] = std::move(aj);
  }
  j["allocation"] = detail::allocation_json(s.allocation);
  j["schedule"] = Json::array();
  for (const auto& c : s.schedule) {
    Json cj;
    cj["from_tick"] = c.from_tick;
    cj["allocation"] = detail::allocation_json(c.allocation);
    j["schedule"].push_back(std::move(cj));
  }
  return j;
}

inline std::string serialize_scenario(const ScenarioFile& s) { return scenario_to_json(s).dump(2) + "\n"; }

// Full allocation schedule: the initial allocation at tick 0 followed by
// each change applied on top of its predecessor.
inline Schedule resolve_schedule(const Topology& topo, const ScenarioFile& s) {
  Schedule out;
  out.push_back({0, Allocation::from_map(topo, s.allocation)});
  for (const auto& change : s.schedule) {
    auto next = out.back().allocation.patched(topo, change.allocation);
    if (change.from_tick == out.back().from_tick) out.back().allocation = std::move(next);
    else out.push_back({change.from_tick, std::move(next)});
  }
  return out;
}

inline Simulator make_simulator(const ScenarioFile& s, std::optional<std::uint64_t> seed_override = {}) {
  return Simulator(std::make_shared<const Topology>(s.graph), s.arrivals, s.tick_ms, seed_override.value_or(s.seed));
}

// ---------------------------------------------------------------------------
// Metrics output

inline Json metrics_to_json(const WindowMetrics& m) {
  Json j;
  j["window_start"] = m.start;
  j["window_end"] = m.end;
  j["delivered"] = Json::object();
  for (const auto& d : m.delivered) j["delivered"][d.pool] = d.records;
  j["processing"] = Json::object();
  for (const auto& p : m.processing) {
    Json pj;
    pj["mean_occupancy"] = p.mean_occupancy;
    pj["blocked_thread_ticks"] = p.blocked_thread_ticks;
    pj["completed"] = p.completed;
    pj["mean_residence_ticks"] = p.mean_residence_ticks;
    j["processing"][p.phase] = std::move(pj);
  }
  j["buffers"] = Json::object();
  for (const auto& b : m.buffers) {
    Json bj;
    bj["kind"] = b.is_queue ? "queue" : "pool";
    bj["mean_depth"] = b.mean_depth;
    j["buffers"][b.id] = std::move(bj);
  }
  j["latency"] = {{"count", m.latency_count}, {"p50", m.latency_p50}, {"p95", m.latency_p95}};
  return j;
}

enum class MetricsFormat { jsonl, csv };

namespace detail {

inline std::string number_text(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string number_text(std::int64_t v) { return std::to_string(v); }

}  // namespace detail

inline constexpr std::string_view kMetricsCsvHeader = "window_start,window_end,entity_kind,entity_id,metric,value";

inline std::string write_metrics(const std::vector<WindowMetrics>& metrics, MetricsFormat format) {
  std::string out;
  if (format == MetricsFormat::jsonl) {
    for (const auto& m : metrics) out += metrics_to_json(m).dump() + "\n";
    return out;
  }
  out += kMetricsCsvHeader;
  out += '\n';
  for (const auto& m : metrics) {
    const auto prefix = std::to_string(m.start) + "," + std::to_string(m.end) + ",";
    auto row = [&](std::string_view kind, const std::string& id, std::string_view metric, const std::string& value) {
      out += prefix;
      out += kind;
      out += ',';
      out += id;
      out += ',';
      out += metric;
      out += ',';
      out += value;
      out += '\n';
    };
    for (const auto& d : m.delivered) row("pool", d.pool, "delivered", detail::number_text(d.records));
    for (const auto& p : m.processing) {
      row("phase", p.phase, "mean_occupancy", detail::number_text(p.mean_occupancy));
      row("phase", p.phase, "blocked_thread_ticks", detail::number_text(p.blocked_thread_ticks));
      row("phase", p.phase, "completed", detail::number_text(p.completed));
      row("phase", p.phase, "mean_residence_ticks", detail::number_text(p.mean_residence_ticks));
    }
    for (const auto& b : m.buffers) row(b.is_queue ? "queue" : "pool", b.id, "mean_depth", detail::number_text(b.mean_depth));
    row("records", "all", "latency_count", detail::number_text(m.latency_count));
    row("records", "all", "latency_p50", detail::number_text(m.latency_p50));
    row("records", "all", "latency_p95", detail::number_text(m.latency_p95));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration CSVs

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return lines;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline double parse_number(std::string_view cell, std::size_t line) {
  cell = trim(cell);
  double v = 0.0;
  const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (r.ec != std::errc{} || r.ptr != cell.data() + cell.size() || cell.empty()) {
    throw InvalidArgument("line " + std::to_string(line) + ": not a number: '" + std::string(cell) + "'");
  }
  return v;
}

}  // namespace detail

// CSV with header "a,throughput".
inline std::vector<ThroughputObservation> read_throughput_csv(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || detail::trim(lines[0]) != "a,throughput") {
    throw InvalidArgument("line 1: expected header 'a,throughput'");
  }
  std::vector<ThroughputObservation> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const auto comma = lines[i].find(',');
    if (comma == std::string_view::npos || lines[i].find(',', comma + 1) != std::string_view::npos) {
      throw InvalidArgument("line " + std::to_string(i + 1) + ": expected two columns");
    }
    out.push_back({detail::parse_number(lines[i].substr(0, comma), i + 1),
                   detail::parse_number(lines[i].substr(comma + 1), i + 1)});
  }
  return out;
}

// Single-column CSV with header "seconds".
inline std::vector<double> read_samples_csv(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || detail::trim(lines[0]) != "seconds") throw InvalidArgument("line 1: expected header 'seconds'");
  std::vector<double> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    out.push_back(detail::parse_number(lines[i], i + 1));
  }
  return out;
}

inline std::string write_throughput_csv(std::span<const ThroughputObservation> obs) {
  std::string out = "a,throughput\n";
  for (const auto& o : obs) out += detail::number_text(o.a) + "," + detail::number_text(o.t_hat) + "\n";
  return out;
}

inline std::string write_samples_csv(std::span<const double> samples) {
  std::string out = "seconds\n";
  for (double x : samples) out += detail::number_text(x) + "\n";
  return out;
}

}  // namespace etlsim
