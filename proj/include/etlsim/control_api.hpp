#pragma once

// Line-delimited control protocol: one JSON object per line in each
// direction. Controller is the transport-free, deterministic core; the
// socket and HTTP transports live in control_server.hpp.

#include <cstdint>
#include <deque>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "etlsim/scenario_io.hpp"

namespace etlsim {

inline constexpr std::int64_t kDefaultPace = 1000;  // ticks per wall second
inline constexpr Tick kDefaultWindow = 1000;

inline Json error_event(const std::string& message) {
  Json j;
  j["type"] = "error";
  j["message"] = message;
  return j;
}

class Controller {
 public:
  Controller(ScenarioFile scenario, Tick window = kDefaultWindow, std::int64_t pace = kDefaultPace)
      : scenario_(std::move(scenario)), sim_(make_simulator(scenario_)), window_(window), pace_(pace) {
    if (window_ < 1) throw InvalidArgument("window must be >= 1");
    if (pace_ < 1) throw InvalidArgument("pace must be >= 1");
    schedule_ = resolve_schedule(sim_.topology(), scenario_);
    restart();
  }

  Tick tick() const noexcept { return sim_.state().tick; }
  Tick window() const noexcept { return window_; }
  std::int64_t pace() const noexcept { return pace_; }
  Tick remaining() const noexcept { return runs_.empty() ? 0 : runs_.back().end - tick(); }
  bool running() const noexcept { return remaining() > 0; }
  const Allocation& allocation() const noexcept { return allocation_; }
  const Simulator& simulator() const noexcept { return sim_; }

  // Immediate replies to one message line: an ack (followed by a
  // state_summary for snapshot), or a single error event if the line is not
  // a well-formed command. Never throws on client input.
  std::vector<Json> handle(std::string_view line) {
    Json msg;
    try {
      msg = Json::parse(line.begin(), line.end());
    } catch (const nlohmann::json::parse_error&) {
      return {error_event("malformed message: not valid JSON")};
    }
    if (!msg.is_object()) return {error_event("malformed message: expected an object")};
    const auto type_it = msg.find("type");
    if (type_it == msg.end() || !type_it->is_string()) return {error_event("malformed message: missing \"type\"")};
    const auto type = type_it->get<std::string>();

    if (type == "set_allocation") return set_allocation(msg);
    if (type == "run") return run(msg);
    if (type == "pause") return pause(msg);
    if (type == "reset") return reset(msg);
    if (type == "snapshot") return snapshot(msg);
    if (type == "set_pace") return set_pace(msg);
    return {error_event("malformed message: unknown type \"" + type + "\"")};
  }

  // Steps up to max_ticks of the outstanding run budget. Returns the
  // window_metrics and run_complete events produced along the way.
  std::vector<Json> advance(Tick max_ticks) {
    std::vector<Json> events;
    const Tick n = std::min(max_ticks, remaining());
    for (Tick i = 0; i < n; ++i) {
      while (next_change_ < schedule_.size() && schedule_[next_change_].from_tick <= tick()) {
        allocation_ = schedule_[next_change_++].allocation;
      }
      sim_.step(allocation_);
      if (tick() - sim_.state().window.start >= window_) events.push_back(window_event(sim_.take_window()));
      while (!runs_.empty() && runs_.front().end <= tick()) {
        Json done;
        done["type"] = "run_complete";
        done["tick"] = tick();
        done["ticks"] = runs_.front().length;
        events.push_back(std::move(done));
        runs_.pop_front();
      }
    }
    return events;
  }

  Json state_summary() const {
    const auto& topo = sim_.topology();
    const auto& st = sim_.state();
    Json j;
    j["type"] = "state_summary";
    j["tick"] = st.tick;
    j["running"] = running();
    j["remaining_ticks"] = remaining();
    j["pace"] = pace_;
    j["window"] = window_;
    j["occupancy"] = Json::object();
    for (std::size_t ord = 0; ord < topo.processing_phase_count(); ++ord) {
      j["occupancy"][topo.processing_key(ord)] = st.population[topo.processing_phase(ord)];
    }
    j["depth"] = Json::object();
    for (std::size_t ph = 0; ph < topo.phase_count(); ++ph) {
      const auto kind = topo.phases()[ph].kind;
      if (kind == PhaseKind::pool || is_queue(kind)) j["depth"][topo.phases()[ph].name()] = st.population[ph];
    }
    j["allocation"] = detail::allocation_json(allocation_.to_map(topo));
    j["blocked_thread_ticks"] = Json::object();
    for (std::size_t ord = 0; ord < topo.processing_phase_count(); ++ord) {
      j["blocked_thread_ticks"][topo.processing_key(ord)] = st.blocked_thread_ticks[topo.processing_phase(ord)];
    }
    return j;
  }

  static Json window_event(const WindowMetrics& m) {
    Json j;
    j["type"] = "window_metrics";
    const auto body = metrics_to_json(m);
    for (const auto& [k, v] : body.items()) j[k] = v;
    return j;
  }

 private:
  struct Run {
    Tick end;
    Tick length;
  };

  void restart() {
    allocation_ = schedule_.front().allocation;
    next_change_ = 1;
    runs_.clear();
  }

  static Json ack(const Json& msg, bool accepted, std::optional<std::string> reason = {}) {
    Json j;
    j["type"] = "ack";
    j["command"] = msg;
    j["accepted"] = accepted;
    if (reason) j["reason"] = *reason;
    return j;
  }

  // Returns an error message if msg has fields beyond `allowed` (plus type
  // and the optional client-chosen id).
  static std::optional<std::string> extra_field(const Json& msg, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, value] : msg.items()) {
      if (key == "type" || key == "id") continue;
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        return "malformed message: unknown field \"" + key + "\"";
      }
    }
    return std::nullopt;
  }

  static std::optional<std::int64_t> positive_int(const Json& msg, const char* key) {
    const auto it = msg.find(key);
    if (it == msg.end() || !it->is_number_integer()) return std::nullopt;
    if (it->is_number_unsigned() && it->get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) return std::nullopt;
    const auto v = it->get<std::int64_t>();
    if (v < 1) return std::nullopt;
    return v;
  }

  std::vector<Json> set_allocation(const Json& msg) {
    if (auto e = extra_field(msg, {"alloc"})) return {error_event(*e)};
    const auto it = msg.find("alloc");
    if (it == msg.end() || !it->is_object()) return {error_event("malformed message: set_allocation needs an \"alloc\" object")};
    const auto& topo = sim_.topology();
    AllocationMap patch;
    for (const auto& [key, value] : it->items()) {
      if (!topo.find_processing(key)) {
        auto a = ack(msg, false, "unknown phase");
        a["phase"] = key;
        return {a};
      }
      if (!value.is_number_integer() || (value.is_number_integer() && !value.is_number_unsigned() && value.get<std::int64_t>() < 0)) {
        auto a = ack(msg, false, "thread count must be an integer >= 0");
        a["phase"] = key;
        return {a};
      }
      patch[key] = value.get<std::int64_t>();
    }
    allocation_ = allocation_.patched(topo, patch);
    return {ack(msg, true)};
  }

  std::vector<Json> run(const Json& msg) {
    if (auto e = extra_field(msg, {"ticks"})) return {error_event(*e)};
    const auto ticks = positive_int(msg, "ticks");
    if (!ticks) return {error_event("malformed message: run needs integer \"ticks\" >= 1")};
    const Tick start = runs_.empty() ? tick() : runs_.back().end;
    runs_.push_back({start + *ticks, *ticks});
    return {ack(msg, true)};
  }

  std::vector<Json> pause(const Json& msg) {
    if (auto e = extra_field(msg, {})) return {error_event(*e)};
    runs_.clear();
    return {ack(msg, true)};
  }

  std::vector<Json> reset(const Json& msg) {
    if (auto e = extra_field(msg, {"seed"})) return {error_event(*e)};
    const auto it = msg.find("seed");
    if (it == msg.end() || !it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
      return {error_event("malformed message: reset needs a non-negative integer \"seed\"")};
    }
    sim_.reset(it->get<std::uint64_t>());
    restart();
    return {ack(msg, true)};
  }

  std::vector<Json> snapshot(const Json& msg) {
    if (auto e = extra_field(msg, {})) return {error_event(*e)};
    return {ack(msg, true), state_summary()};
  }

  std::vector<Json> set_pace(const Json& msg) {
    if (auto e = extra_field(msg, {"ticks_per_second"})) return {error_event(*e)};
    const auto pace = positive_int(msg, "ticks_per_second");
    if (!pace) return {error_event("malformed message: set_pace needs integer \"ticks_per_second\" >= 1")};
    pace_ = *pace;
    return {ack(msg, true)};
  }

  ScenarioFile scenario_;
  Simulator sim_;
  Schedule schedule_;
  std::size_t next_change_ = 1;
  Allocation allocation_;
  Tick window_;
  std::int64_t pace_;
  std::deque<Run> runs_;
};

// Synchronous transport over a pair of streams: each command line is
// answered, then any run it started executes to completion (unpaced)
// before the next line is read.
inline void serve_stream(Controller& ctl, std::istream& in, std::ostream& out) {
  std::string line;
  auto emit = [&](const std::vector<Json>& events) {
    for (const auto& e : events) out << e.dump() << '\n';
    out.flush();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    emit(ctl.handle(line));
    emit(ctl.advance(ctl.remaining()));
  }
}

}  // namespace etlsim
