// etlsim command-line tool: batch simulation, calibration, control server.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "etlsim/calibration.hpp"
#include "etlsim/control_server.hpp"
#include "etlsim/scenario_io.hpp"

namespace {

using namespace etlsim;

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kIoError = 2;

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoFailure("cannot read " + path);
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoFailure("cannot write " + path);
}

void report(const ScenarioError& e, const std::string& path) {
  for (const auto& p : e.problems()) std::cerr << "etlsim: " << path << ": " << p << '\n';
}

struct SimulateArgs {
  std::string scenario;
  Tick ticks = 0;
  Tick window = 1000;
  std::string metrics_out;
  std::string format = "jsonl";
  std::optional<std::uint64_t> seed;
};

int simulate(const SimulateArgs& args) {
  const auto text = read_file(args.scenario);
  const auto file = parse_scenario(text);
  auto sim = make_simulator(file, args.seed);
  auto windows = sim.run(resolve_schedule(sim.topology(), file), args.ticks, args.window);
  if (sim.state().tick > sim.state().window.start) windows.push_back(sim.take_window());
  write_file(args.metrics_out,
             write_metrics(windows, args.format == "csv" ? MetricsFormat::csv : MetricsFormat::jsonl));
  return kOk;
}

int fit_curve_cmd(const std::string& data, const std::string& family_name) {
  const auto obs = read_throughput_csv(read_file(data));
  const auto family = family_name == "rational" ? CurveFamily::rational : CurveFamily::exponential;
  const auto fit = fit_curve(obs, family);
  Json out;
  out["family"] = family_name;
  if (family == CurveFamily::exponential) {
    out["parameters"] = {{"t_max", fit.curve.bound()}, {"k", fit.curve.shape()}};
  } else {
    out["parameters"] = {{"x", fit.curve.bound()}, {"y", fit.curve.shape()}};
  }
  out["rss"] = fit.residual_sum_squares;
  out["converged"] = fit.converged;
  out["iterations"] = fit.iterations;
  out["observations"] = obs.size();
  std::cout << out.dump(2) << '\n';
  return kOk;
}

int fit_dist_cmd(const std::string& data, const std::string& dist) {
  const auto samples = read_samples_csv(read_file(data));
  Json out;
  out["dist"] = dist;
  FittedDistribution model;
  if (dist == "gamma") {
    const auto g = fit_gamma(samples);
    out["parameters"] = {{"alpha", g.shape}, {"scale", g.scale}};
    model = g;
  } else {
    const auto l = fit_lognormal(samples);
    out["parameters"] = {{"mu", l.mu}, {"sigma", l.sigma}};
    model = l;
  }
  const auto gof = goodness_of_fit(samples, model);
  out["mean"] = distribution_mean(model);
  out["log_likelihood"] = gof.log_likelihood;
  out["ks_statistic"] = gof.ks_statistic;
  out["samples"] = samples.size();
  std::cout << out.dump(2) << '\n';
  return kOk;
}

struct ServeArgs {
  std::string scenario;
  std::string bind = "127.0.0.1:7070";
  std::string http;
  bool stdio = false;
  Tick window = kDefaultWindow;
  std::int64_t pace = kDefaultPace;
  std::size_t queue = kDefaultClientQueue;
};

int serve(const ServeArgs& args) {
  const auto file = parse_scenario(read_file(args.scenario));
  Controller controller(file, args.window, args.pace);

  if (args.stdio) {
    serve_stream(controller, std::cin, std::cout);
    return kOk;
  }

  const auto tcp_at = parse_host_port(args.bind);
  std::optional<HostPort> http_at;
  if (!args.http.empty()) http_at = parse_host_port(args.http);

  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto log = [](const std::string& line) { std::cerr << "etlsim: " << line << std::endl; };
  EngineLoop engine(std::move(controller));
  TcpServer tcp(engine, args.queue, log);
  std::optional<HttpBridge> http;
  try {
    tcp.bind(tcp_at);
    if (http_at) {
      http.emplace(engine, args.queue, log);
      http->bind(*http_at);
    }
  } catch (const Error& e) {
    std::cerr << "etlsim: " << e.what() << '\n';
    return kIoError;
  }
  engine.start();
  tcp.start();
  log("listening on " + tcp_at.host + ":" + std::to_string(tcp.port()));
  if (http) {
    http->start();
    log("http bridge on " + http_at->host + ":" + std::to_string(http->port()));
  }

  int sig = 0;
  sigwait(&signals, &sig);
  log("shutting down");
  if (http) http->stop();
  tcp.stop();
  engine.stop();
  return kOk;
}

// Runs `body`, mapping failures to exit codes with a diagnostic.
template <class F>
int guarded(const std::string& input, F&& body) {
  try {
    return body();
  } catch (const IoFailure& e) {
    std::cerr << "etlsim: " << e.what() << '\n';
    return kIoError;
  } catch (const ScenarioError& e) {
    report(e, input);
    return kInvalid;
  } catch (const Error& e) {
    std::cerr << "etlsim: " << input << ": " << e.what() << '\n';
    return kInvalid;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ETL process chain simulator"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Run a scenario and write windowed metrics");
  simulate_cmd->add_option("--scenario", sim.scenario, "Scenario file")->required();
  simulate_cmd->add_option("--ticks", sim.ticks, "Ticks to simulate")->required()->check(CLI::NonNegativeNumber);
  simulate_cmd->add_option("--window", sim.window, "Ticks per metrics window")->capture_default_str()->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--metrics-out", sim.metrics_out, "Metrics output file")->required();
  simulate_cmd->add_option("--format", sim.format, "jsonl or csv")->capture_default_str()->check(CLI::IsMember({"jsonl", "csv"}));
  simulate_cmd->add_option("--seed", sim.seed, "Override the scenario seed");

  std::string curve_data, family = "exponential";
  auto* curve_cmd = app.add_subcommand("fit-curve", "Fit a throughput curve to a,throughput data");
  curve_cmd->add_option("--data", curve_data, "CSV file with header a,throughput")->required();
  curve_cmd->add_option("--family", family, "exponential or rational")->capture_default_str()->check(CLI::IsMember({"exponential", "rational"}));

  std::string dist_data, dist = "gamma";
  auto* dist_cmd = app.add_subcommand("fit-dist", "Fit a processing-time distribution to samples");
  dist_cmd->add_option("--data", dist_data, "CSV file with header seconds")->required();
  dist_cmd->add_option("--dist", dist, "gamma or lognormal")->capture_default_str()->check(CLI::IsMember({"gamma", "lognormal"}));

  ServeArgs srv;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the control protocol for a scenario");
  serve_cmd->add_option("--scenario", srv.scenario, "Scenario file")->required();
  serve_cmd->add_option("--bind", srv.bind, "TCP address host:port")->capture_default_str();
  serve_cmd->add_option("--http", srv.http, "Also serve the HTTP bridge at host:port");
  serve_cmd->add_flag("--stdio", srv.stdio, "Speak the protocol on stdin/stdout instead of TCP");
  serve_cmd->add_option("--window", srv.window, "Ticks per metrics window")->capture_default_str()->check(CLI::PositiveNumber);
  serve_cmd->add_option("--pace", srv.pace, "Ticks per wall-clock second")->capture_default_str()->check(CLI::PositiveNumber);
  serve_cmd->add_option("--queue", srv.queue, "Per-client outbound event limit")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  if (*simulate_cmd) return guarded(sim.scenario, [&] { return simulate(sim); });
  if (*curve_cmd) return guarded(curve_data, [&] { return fit_curve_cmd(curve_data, family); });
  if (*dist_cmd) return guarded(dist_data, [&] { return fit_dist_cmd(dist_data, dist); });
  return guarded(srv.scenario, [&] { return serve(srv); });
}
