#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace superpose {

inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

/// One protocol message:
///
///   u32 little-endian length N
///   N bytes = compact UTF-8 JSON header, 0x0A, raw payload
///
/// The header never contains a raw newline, so it parses on its own. When a
/// payload is present the header describes it with "dtype" ("f32") and
/// "shape" (row-major, little-endian elements).
struct Frame {
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_frame(const Frame& frame);

/// Decodes the frame at the front of `bytes`. Returns nullopt when more bytes
/// are needed; `consumed` is set to the frame's total size on success.
std::optional<Frame> decode_frame(std::span<const std::uint8_t> bytes, std::size_t& consumed);

std::vector<std::uint8_t> encode_f32(std::span<const float> values);
std::vector<float> decode_f32(std::span<const std::uint8_t> bytes);

/// Owning TCP socket that exchanges whole frames.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  ~Connection();
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  static Connection connect_tcp(const std::string& host, std::uint16_t port);

  bool valid() const noexcept { return fd_ >= 0; }
  int fd() const noexcept { return fd_; }
  void send(const Frame& frame);
  /// Blocks for one frame; nullopt on orderly close before any byte arrives.
  std::optional<Frame> receive();
  void shutdown();

 private:
  int fd_ = -1;
};

}  // namespace superpose
