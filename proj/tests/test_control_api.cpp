#include <gtest/gtest.h>

#include <sstream>

#include "etlsim/control_server.hpp"

namespace etlsim {
namespace {

constexpr const char* kScenario = R"({
  "schema_version": 1, "tick_ms": 1, "seed": 11,
  "pools": [{"id": "S", "role": "source"}, {"id": "T", "role": "target"}],
  "edges": [{
    "id": "e1", "from": "S", "to": "T",
    "extract": {"kind": "deterministic_ticks", "ticks": 1},
    "transform": {"kind": "gamma", "curve": {"family": "exponential", "t_max": 100, "k": 10}, "alpha": 4},
    "load": {"kind": "deterministic_ticks", "ticks": 1}
  }],
  "arrivals": {"S": {"kind": "batch", "count": 10000}},
  "allocation": {"e1.E": 64, "e1.T": 2, "e1.L": 64}
})";

Controller make(Tick window = 1000) { return Controller(parse_scenario(kScenario), window); }

std::vector<std::string> types(const std::vector<Json>& events) {
  std::vector<std::string> out;
  for (const auto& e : events) out.push_back(e["type"].get<std::string>());
  return out;
}

TEST(Controller, SetAllocationEchoesInSnapshot) {
  auto ctl = make();
  const auto acks = ctl.handle(R"({"type": "set_allocation", "alloc": {"e1.T": 4}})");
  ASSERT_EQ(acks.size(), 1u);
  EXPECT_EQ(acks[0]["type"], "ack");
  EXPECT_EQ(acks[0]["accepted"], true);
  EXPECT_EQ(acks[0]["command"]["type"], "set_allocation");
  const auto snap = ctl.handle(R"({"type": "snapshot"})");
  ASSERT_EQ(types(snap), (std::vector<std::string>{"ack", "state_summary"}));
  EXPECT_EQ(snap[1]["allocation"]["e1.T"], 4);
  EXPECT_EQ(snap[1]["allocation"]["e1.E"], 64);  // untouched by the partial update
}

TEST(Controller, UnknownPhaseIsRejected) {
  auto ctl = make();
  const auto events = ctl.handle(R"({"type": "set_allocation", "alloc": {"bogus.T": 4}})");
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0]["type"], "ack");
  EXPECT_EQ(events[0]["accepted"], false);
  EXPECT_EQ(events[0]["reason"], "unknown phase");
  EXPECT_EQ(ctl.allocation(), Allocation({64, 2, 64}));
}

TEST(Controller, RejectedPatchIsAtomic) {
  auto ctl = make();
  const auto events = ctl.handle(R"({"type": "set_allocation", "alloc": {"e1.E": 3, "e1.T": -1}})");
  EXPECT_EQ(events[0]["accepted"], false);
  EXPECT_EQ(ctl.allocation(), Allocation({64, 2, 64}));
}

TEST(Controller, RunEmitsWindowsThenCompletion) {
  auto ctl = make(1000);
  EXPECT_EQ(types(ctl.handle(R"({"type": "run", "ticks": 2000})")), std::vector<std::string>{"ack"});
  const auto events = ctl.advance(1'000'000);
  ASSERT_EQ(types(events), (std::vector<std::string>{"window_metrics", "window_metrics", "run_complete"}));
  EXPECT_EQ(events[0]["window_end"], 1000);
  EXPECT_EQ(events[1]["window_end"], 2000);
  EXPECT_EQ(events[2]["tick"], 2000);
  EXPECT_FALSE(ctl.running());
}

TEST(Controller, QueuedRunsCompleteSeparately) {
  auto ctl = make(500);
  ctl.handle(R"({"type": "run", "ticks": 300})");
  ctl.handle(R"({"type": "run", "ticks": 300})");
  EXPECT_EQ(ctl.remaining(), 600);
  const auto events = ctl.advance(10'000);
  EXPECT_EQ(types(events), (std::vector<std::string>{"run_complete", "window_metrics", "run_complete"}));
}

TEST(Controller, PauseDropsBudget) {
  auto ctl = make();
  ctl.handle(R"({"type": "run", "ticks": 5000})");
  ctl.advance(100);
  EXPECT_EQ(ctl.tick(), 100);
  EXPECT_EQ(ctl.handle(R"({"type": "pause"})")[0]["accepted"], true);
  EXPECT_FALSE(ctl.running());
  EXPECT_TRUE(ctl.advance(100).empty());
  EXPECT_EQ(ctl.tick(), 100);
}

TEST(Controller, ResetRestoresInitialState) {
  auto ctl = make();
  ctl.handle(R"({"type": "set_allocation", "alloc": {"e1.T": 9}})");
  ctl.handle(R"({"type": "run", "ticks": 300})");
  ctl.advance(300);
  ctl.handle(R"({"type": "reset", "seed": 11})");
  EXPECT_EQ(ctl.tick(), 0);
  EXPECT_EQ(ctl.allocation(), Allocation({64, 2, 64}));
  EXPECT_EQ(ctl.simulator().state(), make().simulator().state());
}

TEST(Controller, MalformedMessagesProduceErrors) {
  auto ctl = make();
  for (const char* bad : {"not json", "[1,2]", R"({"ticks": 3})", R"({"type": "fly"})", R"({"type": "run"})",
                          R"({"type": "run", "ticks": 0})", R"({"type": "run", "ticks": 1.5})",
                          R"({"type": "reset", "seed": -1})", R"({"type": "set_pace", "ticks_per_second": 0})",
                          R"({"type": "snapshot", "extra": 1})", R"({"type": "set_allocation", "alloc": 3})"}) {
    const auto events = ctl.handle(bad);
    ASSERT_EQ(events.size(), 1u) << bad;
    EXPECT_EQ(events[0]["type"], "error") << bad;
    EXPECT_TRUE(events[0]["message"].get<std::string>().starts_with("malformed message")) << bad;
  }
  EXPECT_EQ(ctl.handle(R"({"type": "snapshot"})")[0]["accepted"], true);
}

TEST(Controller, IdIsEchoed) {
  auto ctl = make();
  const auto events = ctl.handle(R"({"type": "set_pace", "ticks_per_second": 50, "id": "req-7"})");
  EXPECT_EQ(events[0]["command"]["id"], "req-7");
  EXPECT_EQ(ctl.pace(), 50);
}

TEST(Controller, AllocationChangesApplyAtTickBoundary) {
  // Same trajectory whether the change arrives via the protocol between
  // ticks or through a pre-built schedule.
  auto ctl = make(250);
  ctl.handle(R"({"type": "run", "ticks": 500})");
  ctl.advance(250);
  ctl.handle(R"({"type": "set_allocation", "alloc": {"e1.T": 8}})");
  ctl.advance(250);

  auto file = parse_scenario(kScenario);
  Simulator sim = make_simulator(file);
  const Schedule schedule{{0, Allocation({64, 2, 64})}, {250, Allocation({64, 8, 64})}};
  sim.run(schedule, 500, 250);
  EXPECT_EQ(ctl.simulator().state(), sim.state());
}

TEST(Controller, ScenarioScheduleIsFollowed) {
  auto file = parse_scenario(kScenario);
  file.schedule.push_back({100, {{"e1.T", 7}}});
  Controller ctl(file, 1000);
  ctl.handle(R"({"type": "run", "ticks": 150})");
  ctl.advance(150);
  EXPECT_EQ(ctl.allocation(), Allocation({64, 7, 64}));
  ctl.handle(R"({"type": "reset", "seed": 1})");
  EXPECT_EQ(ctl.allocation(), Allocation({64, 2, 64}));
}

TEST(Controller, StateSummaryShape) {
  auto ctl = make();
  const auto s = ctl.state_summary();
  EXPECT_EQ(s["tick"], 0);
  EXPECT_EQ(s["depth"]["S"], 10000);
  EXPECT_EQ(s["depth"]["T"], 0);
  EXPECT_TRUE(s["depth"].contains("e1.QET"));
  EXPECT_TRUE(s["depth"].contains("e1.QTL"));
  EXPECT_EQ(s["occupancy"].size(), 3u);
  EXPECT_EQ(s["running"], false);
}

std::string transcript(const std::string& script) {
  auto ctl = make(500);
  std::istringstream in(script);
  std::ostringstream out;
  serve_stream(ctl, in, out);
  return out.str();
}

TEST(ServeStream, ScriptReplaysIdentically) {
  const std::string script =
      "{\"type\": \"set_allocation\", \"alloc\": {\"e1.T\": 6}}\n"
      "{\"type\": \"run\", \"ticks\": 1500}\n"
      "garbage\n"
      "\n"
      "{\"type\": \"snapshot\"}\r\n"
      "{\"type\": \"reset\", \"seed\": 3}\n"
      "{\"type\": \"run\", \"ticks\": 1000}\n";
  const auto a = transcript(script);
  EXPECT_EQ(a, transcript(script));
  std::istringstream lines(a);
  std::string line;
  std::vector<std::string> kinds;
  while (std::getline(lines, line)) kinds.push_back(Json::parse(line)["type"].get<std::string>());
  EXPECT_EQ(kinds, (std::vector<std::string>{"ack", "ack", "window_metrics", "window_metrics", "window_metrics",
                                             "run_complete", "error", "ack", "state_summary", "ack", "ack",
                                             "window_metrics", "window_metrics", "run_complete"}));
}

TEST(Subscriber, DropsOldestAndReportsCount) {
  Subscriber s(2);
  for (int i = 0; i < 5; ++i) s.push(Json{{"n", i}});
  const auto first = Json::parse(*s.pop(std::chrono::milliseconds(0)));
  EXPECT_EQ(first["n"], 3);
  EXPECT_EQ(first["dropped_events"], 3);
  const auto second = Json::parse(*s.pop(std::chrono::milliseconds(0)));
  EXPECT_EQ(second["n"], 4);
  EXPECT_FALSE(second.contains("dropped_events"));
  EXPECT_FALSE(s.pop(std::chrono::milliseconds(0)).has_value());
}

TEST(HostPort, Parses) {
  EXPECT_EQ(parse_host_port("127.0.0.1:7070").port, 7070);
  EXPECT_EQ(parse_host_port("0.0.0.0:80").host, "0.0.0.0");
  EXPECT_EQ(parse_host_port(":9").host, "127.0.0.1");
  EXPECT_EQ(parse_host_port("5").port, 5);
  EXPECT_THROW(parse_host_port("host:"), InvalidArgument);
  EXPECT_THROW(parse_host_port("host:99999"), InvalidArgument);
}

// Minimal blocking line client.
class LineClient {
 public:
  explicit LineClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) throw std::runtime_error("connect");
    timeval tv{10, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }
  ~LineClient() { ::close(fd_); }

  void send(const std::string& line) {
    const auto text = line + "\n";
    ASSERT_EQ(::send(fd_, text.data(), text.size(), MSG_NOSIGNAL), static_cast<ssize_t>(text.size()));
  }

  Json next() {
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        auto line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return Json::parse(line);
      }
      char chunk[4096];
      const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n <= 0) throw std::runtime_error("connection closed or timed out");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  // Next event of the given type, skipping others.
  Json next_of(const std::string& type) {
    for (;;) {
      auto e = next();
      if (e["type"] == type) return e;
    }
  }

 private:
  int fd_ = -1;
  std::string buffer_;
};

TEST(TcpServer, SnapshotAndBroadcastToTwoClients) {
  EngineLoop engine(Controller(parse_scenario(kScenario), 100, 100'000));
  std::vector<std::string> log;
  std::mutex log_mu;
  TcpServer server(engine, kDefaultClientQueue, [&](const std::string& line) {
    std::lock_guard lock(log_mu);
    log.push_back(line);
  });
  server.bind({"127.0.0.1", 0});
  ASSERT_GT(server.port(), 0);
  engine.start();
  server.start();

  LineClient a(server.port());
  LineClient b(server.port());
  a.send(R"({"type": "snapshot"})");
  EXPECT_EQ(a.next()["type"], "ack");
  EXPECT_EQ(a.next()["type"], "state_summary");
  // b is connected once it has been answered.
  b.send(R"({"type": "snapshot"})");
  b.next_of("state_summary");

  a.send("{broken");
  EXPECT_EQ(a.next()["type"], "error");
  a.send(R"({"type": "run", "ticks": 300})");
  EXPECT_EQ(a.next()["type"], "ack");
  std::vector<Tick> ends_a, ends_b;
  for (int i = 0; i < 3; ++i) ends_a.push_back(a.next_of("window_metrics")["window_end"].get<Tick>());
  for (int i = 0; i < 3; ++i) ends_b.push_back(b.next_of("window_metrics")["window_end"].get<Tick>());
  EXPECT_EQ(ends_a, (std::vector<Tick>{100, 200, 300}));
  EXPECT_EQ(ends_a, ends_b);
  EXPECT_EQ(a.next_of("run_complete")["tick"], 300);
  EXPECT_EQ(b.next_of("run_complete")["tick"], 300);

  server.stop();
  engine.stop();
  std::lock_guard lock(log_mu);
  ASSERT_EQ(log.size(), 2u);
  EXPECT_TRUE(log[0].starts_with("accepted connection from 127.0.0.1:"));
}

TEST(TcpServer, PacingHoldsBackTicks) {
  EngineLoop engine(Controller(parse_scenario(kScenario), 10, 200));
  TcpServer server(engine);
  server.bind({"127.0.0.1", 0});
  engine.start();
  server.start();
  LineClient c(server.port());
  const auto begin = std::chrono::steady_clock::now();
  c.send(R"({"type": "run", "ticks": 60})");
  c.next_of("run_complete");
  const auto seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  EXPECT_GT(seconds, 0.25);  // 60 ticks at 200 ticks/s is 0.3 s
  server.stop();
  engine.stop();
}

TEST(TcpServer, BindFailureThrows) {
  EngineLoop engine(make());
  TcpServer first(engine);
  first.bind({"127.0.0.1", 0});
  TcpServer second(engine);
  EXPECT_THROW(second.bind({"127.0.0.1", first.port()}), Error);
}

TEST(HttpBridge, CommandAndEventStream) {
  EngineLoop engine(Controller(parse_scenario(kScenario), 100, 100'000));
  HttpBridge bridge(engine);
  bridge.bind({"127.0.0.1", 0});
  engine.start();
  bridge.start();

  httplib::Client client("127.0.0.1", bridge.port());
  auto res = client.Post("/command", R"({"type": "set_allocation", "alloc": {"e1.T": 5}})", "application/json");
  ASSERT_TRUE(res);
  auto body = Json::parse(res->body);
  ASSERT_EQ(body.size(), 1u);
  EXPECT_EQ(body[0]["accepted"], true);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  std::string stream;
  std::atomic<bool> got_complete{false};
  std::thread listener([&] {
    httplib::Client sse("127.0.0.1", bridge.port());
    sse.set_read_timeout(10, 0);
    sse.Get("/events", [&](const char* data, std::size_t len) {
      stream.append(data, len);
      if (stream.find("run_complete") != std::string::npos) {
        got_complete = true;
        return false;
      }
      return true;
    });
  });
  // Give the stream time to subscribe before starting the run.
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  res = client.Post("/command", R"({"type": "run", "ticks": 200})", "application/json");
  ASSERT_TRUE(res);
  listener.join();
  EXPECT_TRUE(got_complete);
  EXPECT_NE(stream.find("data: {\"type\":\"window_metrics\""), std::string::npos);

  res = client.Post("/command", "nonsense", "text/plain");
  ASSERT_TRUE(res);
  EXPECT_EQ(Json::parse(res->body)[0]["type"], "error");
  bridge.stop();
  engine.stop();
}

}  // namespace
}  // namespace etlsim
