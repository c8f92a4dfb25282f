#pragma once

// Socket transport: HTTP/1.1 servers for the proxy and the simulated upstream,
// and a client used to forward requests. Request paths are passed through raw,
// without percent-decoding or re-encoding.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

// Small request/response pairs on keep-alive connections otherwise stall on
// Nagle plus delayed ACK (~40 ms per exchange).
#ifndef CPPHTTPLIB_TCP_NODELAY
#define CPPHTTPLIB_TCP_NODELAY true
#endif
#include <httplib.h>

#include "replay_shield/config.hpp"
#include "replay_shield/http.hpp"
#include "replay_shield/proxy.hpp"

namespace replay_shield {

using LogSink = std::function<void(const std::string&)>;

namespace detail {

inline bool is_hop_header(const std::string& name) {
  for (const char* h : {"Content-Length", "Transfer-Encoding", "Connection", "Keep-Alive"})
    if (iequals(name, h)) return true;
  return false;
}

inline httplib::Client& client_for(const std::string& address) {
  thread_local std::map<std::string, std::unique_ptr<httplib::Client>> clients;
  auto& slot = clients[address];
  if (!slot) {
    auto hp = parse_host_port(address);
    slot = std::make_unique<httplib::Client>(hp.host, hp.port);
    slot->set_keep_alive(true);
    slot->set_url_encode(false);
    slot->set_follow_location(false);
    slot->set_connection_timeout(2, 0);
    slot->set_read_timeout(10, 0);
  }
  return *slot;
}

}  // namespace detail

/// Sends `request` to `address` (HOST:PORT). Throws UpstreamUnreachable on
/// connection or protocol failure.
inline Response http_fetch(const std::string& address, const Request& request) {
  httplib::Request req;
  req.method = request.method;
  req.path = request.target;
  for (const auto& [n, v] : request.headers)
    if (!detail::is_hop_header(n) && !iequals(n, "Host")) req.headers.emplace(n, v);
  auto result = detail::client_for(address).send(req);
  if (!result) throw UpstreamUnreachable(address + ": " + httplib::to_string(result.error()));
  Response out;
  out.status = result->status;
  for (const auto& [n, v] : result->headers)
    if (!detail::is_hop_header(n)) out.headers.emplace_back(n, v);
  out.body = result->body;
  return out;
}

/// Workload transport that issues real GETs against `address`.
inline Transport http_transport(std::string address) {
  return [address = std::move(address)](const std::string& method, const std::string& url, double) {
    return http_fetch(address, {method, url, {}});
  };
}

/// One HTTP server around a request handler, logging
/// `t method url status cache_marker` per request.
class LiveServer {
 public:
  using Handler = std::function<Response(const Request&, Timestamp)>;

  LiveServer(Handler handler, LogSink log = {}) : handler_(std::move(handler)), log_(std::move(log)) {
    server_.set_keep_alive_max_count(10000);
    // httplib's default adds SO_REUSEPORT, which lets a second instance bind the
    // same port and silently take half the traffic.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
    });
    auto route = [this](const httplib::Request& req, httplib::Response& res) { dispatch(req, res); };
    server_.Get(".*", route);
    server_.Post(".*", route);
    server_.Put(".*", route);
    server_.Delete(".*", route);
    server_.Options(".*", route);
  }

  ~LiveServer() { stop(); }

  LiveServer(const LiveServer&) = delete;
  LiveServer& operator=(const LiveServer&) = delete;

  /// Binds to host:port (port 0 picks a free port). Returns the bound port.
  int bind(const std::string& host, int port) {
    int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    port_ = bound;
    return bound;
  }

  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  /// Blocks until stop() is called from elsewhere.
  void run() { server_.listen_after_bind(); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  Timestamp now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  }

 private:
  void dispatch(const httplib::Request& req, httplib::Response& res) {
    Request request{req.method, req.target, {}};
    for (const auto& [n, v] : req.headers) request.headers.emplace_back(n, v);
    const auto t = now();
    auto response = handler_(request, t);

    res.status = response.status;
    std::string content_type = "text/plain";
    for (const auto& [n, v] : response.headers) {
      if (iequals(n, "Content-Type"))
        content_type = v;
      else if (!detail::is_hop_header(n))
        res.set_header(n, v);
    }
    res.set_content(response.body, content_type);

    if (log_) {
      auto marker = find_header(response.headers, "X-Cache").value_or("-");
      char ts[32];
      std::snprintf(ts, sizeof ts, "%.3f", t);
      log_(std::string(ts) + ' ' + req.method + ' ' + req.target + ' ' + std::to_string(response.status) + ' ' +
           marker);
    }
  }

  Handler handler_;
  LogSink log_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::chrono::steady_clock::time_point started_ = std::chrono::steady_clock::now();
};

}  // namespace replay_shield
