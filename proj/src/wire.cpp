#include "superpose/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>

#include "superpose/error.hpp"

namespace superpose {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  const std::string header = frame.header.dump();
  const std::size_t body = header.size() + 1 + frame.payload.size();
  if (body > kMaxFrameBytes) throw Error(ErrorCode::protocol_error, "frame too large");
  std::vector<std::uint8_t> out;
  out.reserve(4 + body);
  put_u32(out, static_cast<std::uint32_t>(body));
  out.insert(out.end(), header.begin(), header.end());
  out.push_back('\n');
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  return out;
}

std::optional<Frame> decode_frame(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
  if (bytes.size() < 4) return std::nullopt;
  const std::uint32_t body = get_u32(bytes.data());
  if (body > kMaxFrameBytes) throw Error(ErrorCode::protocol_error, "frame length exceeds limit");
  if (bytes.size() < 4 + static_cast<std::size_t>(body)) return std::nullopt;
  const auto* begin = bytes.data() + 4;
  const auto* end = begin + body;
  const auto* newline = std::find(begin, end, static_cast<std::uint8_t>('\n'));
  if (newline == end) throw Error(ErrorCode::protocol_error, "frame header is not terminated");
  Frame frame;
  try {
    frame.header = nlohmann::json::parse(begin, newline);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::protocol_error, std::string("frame header: ") + e.what());
  }
  frame.payload.assign(newline + 1, end);
  consumed = 4 + static_cast<std::size_t>(body);
  return frame;
}

std::vector<std::uint8_t> encode_f32(std::span<const float> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * 4);
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

std::vector<float> decode_f32(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) throw Error(ErrorCode::protocol_error, "f32 payload not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<float>(get_u32(&bytes[4 * i]));
  return out;
}

Connection::~Connection() {
  if (fd_ >= 0) ::close(fd_);
}

Connection::Connection(Connection&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

Connection Connection::connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &found) != 0 || found == nullptr) {
    throw Error(ErrorCode::io_error, "cannot resolve " + host);
  }
  int fd = -1;
  for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0) throw Error(ErrorCode::io_error, "cannot connect to " + host + ":" + service);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return Connection(fd);
}

void Connection::send(const Frame& frame) {
  const auto bytes = encode_frame(frame);
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::io_error, std::string("send: ") + std::strerror(errno));
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<Frame> Connection::receive() {
  std::vector<std::uint8_t> buffer;
  auto read_exact = [&](std::size_t want) -> bool {
    const std::size_t start = buffer.size();
    buffer.resize(start + want);
    std::size_t got = 0;
    while (got < want) {
      const ssize_t n = ::recv(fd_, buffer.data() + start + got, want - got, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n == 0 && start == 0 && got == 0) return false;
      if (n <= 0) throw Error(ErrorCode::io_error, "connection closed mid-frame");
      got += static_cast<std::size_t>(n);
    }
    return true;
  };
  if (!read_exact(4)) return std::nullopt;
  const std::uint32_t body = get_u32(buffer.data());
  if (body > kMaxFrameBytes) throw Error(ErrorCode::protocol_error, "frame length exceeds limit");
  read_exact(body);
  std::size_t consumed = 0;
  auto frame = decode_frame(buffer, consumed);
  if (!frame) throw Error(ErrorCode::protocol_error, "incomplete frame");
  return frame;
}

void Connection::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

}  // namespace superpose
