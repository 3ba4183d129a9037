#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace superpose {

struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const;
  static Digest from_hex(std::string_view hex);
  /// First eight bytes read little-endian.
  std::uint64_t prefix64() const;

  auto operator<=>(const Digest&) const = default;
};

/// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(Sha256&&) noexcept;
  Sha256& operator=(Sha256&&) noexcept;

  Sha256& update(std::span<const std::uint8_t> bytes);
  Sha256& update(std::string_view text);
  Sha256& update_u32(std::uint32_t value);
  Sha256& update_u64(std::uint64_t value);
  Sha256& update_f64(double value);
  Digest finish();

  static Digest of(std::span<const std::uint8_t> bytes);
  static Digest of(std::string_view text);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace superpose
