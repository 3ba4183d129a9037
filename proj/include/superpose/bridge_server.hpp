#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <thread>

#include "superpose/lm.hpp"
#include "superpose/wire.hpp"

namespace superpose {

struct BridgeServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  ///< 0 picks an ephemeral port
  std::uint32_t version = kProtocolVersion;
};

/// Serves any in-process Backend over the bridge protocol. Cache ids are
/// scoped to the connection that created them.
class BridgeServer {
 public:
  explicit BridgeServer(Backend& backend, BridgeServerOptions options = {});
  ~BridgeServer();
  BridgeServer(const BridgeServer&) = delete;
  BridgeServer& operator=(const BridgeServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::string address() const { return options_.host + ":" + std::to_string(port_); }
  void stop();

  /// Answers one request; exposed for tests that bypass the socket.
  struct Session;
  Frame handle(Session& session, const Frame& request);

 private:
  void accept_loop();
  void serve_connection(int fd);

  Backend& backend_;
  BridgeServerOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex mutex_;
  std::list<int> client_fds_;
  std::list<std::jthread> workers_;
  std::jthread acceptor_;
};

}  // namespace superpose
