#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "superpose/lm.hpp"
#include "superpose/wire.hpp"

namespace superpose {

/// Static capability record returned by the `hello` call.
struct BridgeInfo {
  std::uint32_t version = 0;
  std::string model_id;
  ModelShape shape;
  bool supports_attention_summary = false;
};

/// Client side of the backend bridge protocol. KV state stays on the server;
/// handles carry server cache ids. One request in flight per connection.
class RemoteBackend final : public Backend {
 public:
  RemoteBackend(const std::string& host, std::uint16_t port);

  /// Parses "host:port".
  static std::unique_ptr<RemoteBackend> connect(std::string_view address);

  const ModelShape& shape() const override { return info_.shape; }
  const std::string& model_id() const override { return info_.model_id; }
  bool supports_attention_summary() const override { return info_.supports_attention_summary; }
  void release(const KVCacheHandle& handle) override;

  const BridgeInfo& info() const noexcept { return info_; }
  /// Re-issues hello; used to check idempotence.
  BridgeInfo hello();
  /// Raw drop of server cache ids.
  void drop(const std::vector<std::string>& cache_ids);

 protected:
  ExtendResult do_extend(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                         const PositionVector& positions, bool want_attention) override;
  bool reentrant() const override { return false; }

 private:
  Frame call(const Frame& request);

  std::mutex mutex_;
  Connection connection_;
  BridgeInfo info_;
};

/// Raises the Error described by an error response header ({"ok": false, ...}).
void throw_if_error(const nlohmann::json& header);

}  // namespace superpose
