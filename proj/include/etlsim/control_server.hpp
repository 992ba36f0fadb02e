#pragma once

// Network transports for the control protocol. One engine thread owns the
// Controller; TCP clients and the HTTP bridge talk to it only through
// queues.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <functional>
#include <future>
#include <list>
#include <memory>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "etlsim/control_api.hpp"

namespace etlsim {

inline constexpr std::size_t kDefaultClientQueue = 1024;

struct HostPort {
  std::string host;
  int port = 0;
};

// "host:port", ":port" or "port". Host defaults to 127.0.0.1.
inline HostPort parse_host_port(const std::string& text) {
  HostPort hp{"127.0.0.1", 0};
  const auto colon = text.rfind(':');
  std::string port = text;
  if (colon != std::string::npos) {
    if (colon > 0) hp.host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  int value = -1;
  const auto r = std::from_chars(port.data(), port.data() + port.size(), value);
  if (port.empty() || r.ec != std::errc{} || r.ptr != port.data() + port.size() || value < 0 || value > 65535) {
    throw InvalidArgument("bad address '" + text + "': expected host:port");
  }
  hp.port = value;
  return hp;
}

// Outbound event queue for one client. Bounded: when full the oldest event
// is discarded and counted; the count rides on the next delivered event as
// "dropped_events".
class Subscriber {
 public:
  explicit Subscriber(std::size_t capacity = kDefaultClientQueue) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  void push(Json event) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      if (queue_.size() >= capacity_) {
        queue_.pop_front();
        ++dropped_;
      }
      queue_.push_back(std::move(event));
    }
    cv_.notify_one();
  }

  // Next event as a single line (no newline), or nullopt on timeout/close.
  std::optional<std::string> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) return std::nullopt;
    auto event = std::move(queue_.front());
    queue_.pop_front();
    if (dropped_ > 0) {
      event["dropped_events"] = dropped_;
      dropped_ = 0;
    }
    return event.dump();
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Json> queue_;
  std::size_t capacity_;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

// Owns the Controller on its own thread. Commands are applied in arrival
// order between ticks; runs are paced against the wall clock.
class EngineLoop {
 public:
  using Reply = std::promise<std::vector<Json>>;

  explicit EngineLoop(Controller controller) : ctl_(std::move(controller)) {}
  ~EngineLoop() { stop(); }
  EngineLoop(const EngineLoop&) = delete;
  EngineLoop& operator=(const EngineLoop&) = delete;

  void start() {
    if (thread_.joinable()) return;
    thread_ = std::thread([this] { loop(); });
  }

  void stop() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  // Direct replies (ack, state_summary, error) go to `client`.
  void submit(std::string line, std::shared_ptr<Subscriber> client) {
    enqueue({std::move(line), std::move(client), nullptr});
  }

  // Direct replies are delivered through the returned future instead.
  std::future<std::vector<Json>> request(std::string line) {
    auto reply = std::make_shared<Reply>();
    auto future = reply->get_future();
    enqueue({std::move(line), nullptr, std::move(reply)});
    return future;
  }

  void subscribe(const std::shared_ptr<Subscriber>& s) {
    std::lock_guard lock(mu_);
    subscribers_.push_back(s);
  }

  void unsubscribe(const std::shared_ptr<Subscriber>& s) {
    std::lock_guard lock(mu_);
    subscribers_.remove_if([&](const auto& w) {
      auto p = w.lock();
      return !p || p == s;
    });
  }

 private:
  struct Command {
    std::string line;
    std::shared_ptr<Subscriber> client;
    std::shared_ptr<Reply> reply;
  };

  using Clock = std::chrono::steady_clock;

  void enqueue(Command c) {
    {
      std::lock_guard lock(mu_);
      commands_.push_back(std::move(c));
    }
    cv_.notify_all();
  }

  void broadcast(const std::vector<Json>& events) {
    if (events.empty()) return;
    std::vector<std::shared_ptr<Subscriber>> targets;
    {
      std::lock_guard lock(mu_);
      for (const auto& w : subscribers_) {
        if (auto s = w.lock()) targets.push_back(std::move(s));
      }
    }
    for (const auto& s : targets) {
      for (const auto& e : events) s->push(e);
    }
  }

  void loop() {
    Clock::time_point anchor_time = Clock::now();
    Tick anchor_tick = 0;
    for (;;) {
      std::deque<Command> batch;
      {
        std::unique_lock lock(mu_);
        if (!ctl_.running()) {
          cv_.wait(lock, [&] { return stopping_ || !commands_.empty(); });
        } else {
          const auto due = anchor_time + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(
                                             static_cast<double>(ctl_.tick() + 1 - anchor_tick) / ctl_.pace()));
          cv_.wait_until(lock, due, [&] { return stopping_ || !commands_.empty(); });
        }
        if (stopping_) return;
        batch.swap(commands_);
      }

      for (auto& c : batch) {
        const bool was_running = ctl_.running();
        const auto pace = ctl_.pace();
        const auto tick = ctl_.tick();
        auto events = ctl_.handle(c.line);
        if ((!was_running && ctl_.running()) || pace != ctl_.pace() || ctl_.tick() != tick) {
          anchor_time = Clock::now();
          anchor_tick = ctl_.tick();
        }
        if (c.reply) {
          c.reply->set_value(std::move(events));
        } else if (c.client) {
          for (auto& e : events) c.client->push(std::move(e));
        }
      }

      if (ctl_.running()) {
        const double elapsed = std::chrono::duration<double>(Clock::now() - anchor_time).count();
        const auto target = anchor_tick + static_cast<Tick>(elapsed * static_cast<double>(ctl_.pace()));
        // At most ~10 ms of simulated work between command checks.
        const Tick chunk = std::max<Tick>(1, ctl_.pace() / 100);
        const Tick n = std::min(target - ctl_.tick(), chunk);
        if (n > 0) broadcast(ctl_.advance(n));
      }
    }
  }

  Controller ctl_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Command> commands_;
  std::list<std::weak_ptr<Subscriber>> subscribers_;
  bool stopping_ = false;
  std::thread thread_;
};

using LogFn = std::function<void(const std::string&)>;

// Newline-delimited protocol over TCP. Each client gets a reader thread
// feeding the engine and a writer thread draining its Subscriber.
class TcpServer {
 public:
  TcpServer(EngineLoop& engine, std::size_t client_queue = kDefaultClientQueue, LogFn log = {})
      : engine_(engine), client_queue_(client_queue), log_(std::move(log)) {}
  ~TcpServer() { stop(); }
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  // Throws Error if the address cannot be bound.
  void bind(const HostPort& where) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* found = nullptr;
    const auto port = std::to_string(where.port);
    if (const int rc = ::getaddrinfo(where.host.c_str(), port.c_str(), &hints, &found); rc != 0) {
      throw Error("cannot resolve " + where.host + ": " + ::gai_strerror(rc));
    }
    std::string last_error = "no usable address";
    for (auto* ai = found; ai; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      const int one = 1;
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
        listen_fd_ = fd;
        break;
      }
      last_error = std::strerror(errno);
      ::close(fd);
    }
    ::freeaddrinfo(found);
    if (listen_fd_ < 0) throw Error("cannot bind " + where.host + ":" + port + ": " + last_error);

    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                       : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  }

  int port() const noexcept { return port_; }

  void start() {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    std::list<std::shared_ptr<Client>> clients;
    {
      std::lock_guard lock(mu_);
      clients.swap(clients_);
    }
    for (auto& c : clients) {
      ::shutdown(c->fd, SHUT_RDWR);
      c->out->close();
    }
    for (auto& c : clients) c->join();
  }

 private:
  struct Client {
    int fd = -1;
    std::shared_ptr<Subscriber> out;
    std::thread reader;
    std::thread writer;

    void join() {
      if (reader.joinable()) reader.join();
      if (writer.joinable()) writer.join();
      if (fd >= 0) ::close(fd);
      fd = -1;
    }
  };

  static constexpr std::size_t kMaxLine = 1 << 20;

  void accept_loop() {
    while (!stopping_) {
      sockaddr_storage addr{};
      socklen_t len = sizeof addr;
      const int fd = ::accept(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
      if (fd < 0) {
        if (stopping_) return;
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return;
      }
      if (log_) log_("accepted connection from " + peer_name(addr));
      reap();
      auto client = std::make_shared<Client>();
      client->fd = fd;
      client->out = std::make_shared<Subscriber>(client_queue_);
      engine_.subscribe(client->out);
      client->writer = std::thread([this, client] { write_loop(*client); });
      client->reader = std::thread([this, client] { read_loop(*client); });
      std::lock_guard lock(mu_);
      clients_.push_back(std::move(client));
    }
  }

  static std::string peer_name(const sockaddr_storage& addr) {
    char host[INET6_ADDRSTRLEN] = "?";
    int port = 0;
    if (addr.ss_family == AF_INET) {
      const auto* in = reinterpret_cast<const sockaddr_in*>(&addr);
      ::inet_ntop(AF_INET, &in->sin_addr, host, sizeof host);
      port = ntohs(in->sin_port);
    } else if (addr.ss_family == AF_INET6) {
      const auto* in = reinterpret_cast<const sockaddr_in6*>(&addr);
      ::inet_ntop(AF_INET6, &in->sin6_addr, host, sizeof host);
      port = ntohs(in->sin6_port);
    }
    return std::string(host) + ":" + std::to_string(port);
  }

  // Joins clients whose connection has ended.
  void reap() {
    std::list<std::shared_ptr<Client>> done;
    {
      std::lock_guard lock(mu_);
      for (auto it = clients_.begin(); it != clients_.end();) {
        if ((*it)->out->closed()) {
          done.push_back(*it);
          it = clients_.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto& c : done) c->join();
  }

  void read_loop(Client& c) {
    std::string buffer;
    char chunk[4096];
    bool overlong = false;
    for (;;) {
      const auto n = ::recv(c.fd, chunk, sizeof chunk, 0);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n', start)) {
        std::string line = buffer.substr(start, nl - start);
        start = nl + 1;
        if (overlong) {
          overlong = false;
          continue;
        }
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        engine_.submit(std::move(line), c.out);
      }
      buffer.erase(0, start);
      if (buffer.size() > kMaxLine) {
        c.out->push(error_event("malformed message: line too long"));
        buffer.clear();
        overlong = true;
      }
    }
    engine_.unsubscribe(c.out);
    c.out->close();
  }

  void write_loop(Client& c) {
    while (!c.out->closed()) {
      auto line = c.out->pop(std::chrono::milliseconds(200));
      if (!line) continue;
      line->push_back('\n');
      std::size_t sent = 0;
      while (sent < line->size()) {
        const auto n = ::send(c.fd, line->data() + sent, line->size() - sent, MSG_NOSIGNAL);
        if (n <= 0) {
          ::shutdown(c.fd, SHUT_RDWR);
          return;
        }
        sent += static_cast<std::size_t>(n);
      }
    }
  }

  EngineLoop& engine_;
  std::size_t client_queue_;
  LogFn log_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex mu_;
  std::list<std::shared_ptr<Client>> clients_;
};

// Browser-reachable bridge: POST /command takes one protocol message and
// answers with its direct replies as a JSON array; GET /events streams
// broadcast events as server-sent events.
class HttpBridge {
 public:
  HttpBridge(EngineLoop& engine, std::size_t client_queue = kDefaultClientQueue, LogFn log = {})
      : engine_(engine), client_queue_(client_queue), log_(std::move(log)) {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server_.Options("/command", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server_.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = req.body;
      while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
      if (body.find('\n') != std::string::npos) {
        res.set_content(Json::array({error_event("malformed message: one message per request")}).dump(),
                        "application/json");
        return;
      }
      auto future = engine_.request(std::move(body));
      if (future.wait_for(std::chrono::seconds(10)) != std::future_status::ready) {
        res.status = 503;
        return;
      }
      Json out = Json::array();
      for (auto& e : future.get()) out.push_back(std::move(e));
      res.set_content(out.dump(), "application/json");
    });
    server_.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
      if (log_) log_("accepted event stream from " + req.remote_addr + ":" + std::to_string(req.remote_port));
      auto sub = std::make_shared<Subscriber>(client_queue_);
      engine_.subscribe(sub);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream",
          [this, sub](std::size_t, httplib::DataSink& sink) {
            if (stopping_) return false;
            std::string chunk;
            if (auto line = sub->pop(std::chrono::milliseconds(500))) chunk = "data: " + *line + "\n\n";
            else chunk = ": keepalive\n\n";
            return sink.is_writable() && sink.write(chunk.data(), chunk.size());
          },
          [this, sub](bool) {
            engine_.unsubscribe(sub);
            sub->close();
          });
    });
  }

  ~HttpBridge() { stop(); }
  HttpBridge(const HttpBridge&) = delete;
  HttpBridge& operator=(const HttpBridge&) = delete;

  void bind(const HostPort& where) {
    if (where.port == 0) port_ = server_.bind_to_any_port(where.host);
    else port_ = server_.bind_to_port(where.host, where.port) ? where.port : -1;
    if (port_ < 0) throw Error("cannot bind http " + where.host + ":" + std::to_string(where.port));
  }

  int port() const noexcept { return port_; }

  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  EngineLoop& engine_;
  std::size_t client_queue_;
  LogFn log_;
  httplib::Server server_;
  int port_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

}  // namespace etlsim
