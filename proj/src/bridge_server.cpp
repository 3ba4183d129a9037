#include "superpose/bridge_server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>

namespace superpose {

struct BridgeServer::Session {
  std::map<std::string, KVCacheHandle> caches;
  std::uint64_t next_id = 0;
};

namespace {

Frame error_frame(ErrorCode code, const std::string& message) {
  return {{{"ok", false}, {"error", to_string(code)}, {"message", message}}, {}};
}

}  // namespace

BridgeServer::BridgeServer(Backend& backend, BridgeServerOptions options)
    : backend_(backend), options_(std::move(options)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::io_error, "socket failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(ErrorCode::invalid_argument, "bad listen address " + options_.host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw Error(ErrorCode::io_error, "cannot listen: " + why);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::jthread([this] { accept_loop(); });
}

BridgeServer::~BridgeServer() { stop(); }

void BridgeServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  {
    std::lock_guard lock(mutex_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  workers_.clear();
}

void BridgeServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    std::lock_guard lock(mutex_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void BridgeServer::serve_connection(int fd) {
  Connection conn(fd);
  Session session;
  try {
    while (auto request = conn.receive()) conn.send(handle(session, *request));
  } catch (const Error&) {
    // peer went away mid-frame or the server is stopping
  }
  std::lock_guard lock(mutex_);
  client_fds_.remove(fd);
}

Frame BridgeServer::handle(Session& session, const Frame& request) {
  try {
    const auto& h = request.header;
    const auto version = h.value("version", 0u);
    if (version != options_.version) {
      return error_frame(ErrorCode::protocol_version_mismatch,
                         "server speaks version " + std::to_string(options_.version) +
                             ", client sent " + std::to_string(version));
    }
    const auto op = h.value("op", std::string());
    if (op == "hello") {
      return {{{"ok", true},
               {"version", options_.version},
               {"model_id", backend_.model_id()},
               {"shape", to_json(backend_.shape())},
               {"position_scheme", to_string(backend_.shape().scheme)},
               {"supports_attention_summary", backend_.supports_attention_summary()}},
              {}};
    }
    if (op == "drop") {
      for (const auto& id : h.value("cache_ids", std::vector<std::string>{})) session.caches.erase(id);
      return {{{"ok", true}}, {}};
    }
    if (op == "extend") {
      std::vector<KVCacheHandle> prefix;
      for (const auto& id : h.at("prefix_ids").get<std::vector<std::string>>()) {
        auto it = session.caches.find(id);
        if (it == session.caches.end()) {
          return error_frame(ErrorCode::unknown_cache_id, "no cache '" + id + "' on this connection");
        }
        prefix.push_back(it->second);
      }
      const auto tokens = h.at("tokens").get<std::vector<TokenId>>();
      const auto positions = h.at("positions").get<PositionVector>();
      const bool want_attention = h.value("want_attention", false);
      auto result = backend_.extend(prefix, tokens, positions, want_attention);
      const std::string id = "c" + std::to_string(session.next_id++);
      session.caches.emplace(id, result.cache);
      nlohmann::json reply = {{"ok", true},
                              {"cache_id", id},
                              {"length", tokens.size()},
                              {"dtype", "f32"},
                              {"shape", {result.logits.rows(), result.logits.vocab()}}};
      if (want_attention) reply["attention"] = result.attention;
      return {std::move(reply), encode_f32(result.logits.data())};
    }
    return error_frame(ErrorCode::protocol_error, "unknown op '" + op + "'");
  } catch (const Error& e) {
    return error_frame(e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_frame(ErrorCode::protocol_error, e.what());
  }
}

}  // namespace superpose
