#include "superpose/remote_backend.hpp"

#include <charconv>

namespace superpose {

void throw_if_error(const nlohmann::json& header) {
  if (header.value("ok", false)) return;
  const auto name = header.value("error", std::string("ProtocolError"));
  throw Error(error_code_from_string(name), header.value("message", std::string("remote error")));
}

RemoteBackend::RemoteBackend(const std::string& host, std::uint16_t port)
    : connection_(Connection::connect_tcp(host, port)) {
  info_ = hello();
}

std::unique_ptr<RemoteBackend> RemoteBackend::connect(std::string_view address) {
  const auto colon = address.rfind(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::invalid_argument, "remote address must be host:port");
  }
  std::uint16_t port = 0;
  const auto digits = address.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    throw Error(ErrorCode::invalid_argument, "bad port in '" + std::string(address) + "'");
  }
  return std::make_unique<RemoteBackend>(std::string(address.substr(0, colon)), port);
}

Frame RemoteBackend::call(const Frame& request) {
  std::lock_guard lock(mutex_);
  connection_.send(request);
  auto reply = connection_.receive();
  if (!reply) throw Error(ErrorCode::io_error, "bridge closed the connection");
  throw_if_error(reply->header);
  return std::move(*reply);
}

BridgeInfo RemoteBackend::hello() {
  const auto reply = call({{{"op", "hello"}, {"version", kProtocolVersion}}, {}});
  BridgeInfo info;
  info.version = reply.header.at("version").get<std::uint32_t>();
  if (info.version != kProtocolVersion) {
    throw Error(ErrorCode::protocol_version_mismatch,
                "server speaks version " + std::to_string(info.version));
  }
  info.model_id = reply.header.at("model_id").get<std::string>();
  info.shape = model_shape_from_json(reply.header.at("shape"));
  info.supports_attention_summary = reply.header.value("supports_attention_summary", false);
  return info;
}

void RemoteBackend::drop(const std::vector<std::string>& cache_ids) {
  call({{{"op", "drop"}, {"version", kProtocolVersion}, {"cache_ids", cache_ids}}, {}});
}

void RemoteBackend::release(const KVCacheHandle& handle) {
  std::vector<std::string> ids;
  for (const auto& b : handle.blocks()) {
    if (!b->remote_id.empty()) ids.push_back(b->remote_id);
  }
  if (!ids.empty()) drop(ids);
}

ExtendResult RemoteBackend::do_extend(std::span<const KVCacheHandle> prefix,
                                      std::span<const TokenId> tokens,
                                      const PositionVector& positions, bool want_attention) {
  std::vector<std::string> ids;
  std::vector<std::size_t> blocks_per_handle;
  for (const auto& handle : prefix) {
    blocks_per_handle.push_back(handle.blocks().size());
    for (const auto& b : handle.blocks()) {
      if (b->remote_id.empty()) {
        throw Error(ErrorCode::unknown_cache_id, "prefix block has no server cache id");
      }
      ids.push_back(b->remote_id);
    }
  }
  nlohmann::json header = {{"op", "extend"},
                           {"version", kProtocolVersion},
                           {"prefix_ids", ids},
                           {"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())},
                           {"positions", positions},
                           {"want_attention", want_attention}};
  const auto reply = call({std::move(header), {}});

  const auto shape = reply.header.at("shape").get<std::vector<std::size_t>>();
  if (reply.header.value("dtype", std::string()) != "f32" || shape.size() != 2 ||
      shape[0] != tokens.size()) {
    throw Error(ErrorCode::protocol_error, "unexpected logits payload descriptor");
  }
  ExtendResult result;
  result.logits = LogitBlock(shape[0], shape[1], decode_f32(reply.payload));

  auto block = std::make_shared<KVBlock>();
  block->tokens.assign(tokens.begin(), tokens.end());
  block->positions = positions;
  block->remote_id = reply.header.at("cache_id").get<std::string>();
  block->fingerprint = derive_fingerprint(model_id(), prefix, tokens, positions);
  result.cache = KVCacheHandle(model_id(), std::move(block));

  if (want_attention) {
    // The server reports mass per prefix block; fold it back per handle.
    const auto per_block = reply.header.at("attention").get<std::vector<double>>();
    if (per_block.size() != ids.size() + 1) {
      throw Error(ErrorCode::protocol_error, "attention summary has wrong length");
    }
    std::size_t cursor = 0;
    for (std::size_t count : blocks_per_handle) {
      double m = 0.0;
      for (std::size_t i = 0; i < count; ++i) m += per_block[cursor++];
      result.attention.push_back(m);
    }
    result.attention.push_back(per_block.back());
  }
  return result;
}

}  // namespace superpose
