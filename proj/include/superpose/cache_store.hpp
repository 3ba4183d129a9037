#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "superpose/digest.hpp"
#include "superpose/lm.hpp"

namespace superpose {

/// Content address of a KV block: the block fingerprint, which already folds
/// in the model id and the whole ancestor (token, position) stream.
using CacheKey = Digest;

inline constexpr std::uint16_t kRecordVersion = 1;
inline constexpr std::uint8_t kHashSha256 = 1;
inline constexpr std::uint8_t kElemF32 = 1;

/// One persisted KV block. Tensors are layer-major, token-major within a layer.
struct CacheRecord {
  CacheKey key;
  std::string model_id;
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t head_dim = 0;
  std::uint64_t created_unix = 0;
  std::vector<TokenId> tokens;
  PositionVector positions;
  std::vector<float> keys;
  std::vector<float> values;
  LogitBlock logits;  ///< optional; empty when not kept

  std::size_t token_count() const noexcept { return tokens.size(); }
  /// K plus V bytes.
  std::size_t tensor_bytes() const noexcept { return (keys.size() + values.size()) * sizeof(float); }
  bool operator==(const CacheRecord&) const = default;
};

/// 2 * L * d_model * elem_bytes * tokens.
std::size_t memory_estimate(const ModelShape& shape, std::size_t token_count);

/// Little-endian record layout:
///
///   "SPKV" | u16 version | u8 hash fn | u8 elem type
///   u64 model-id hash | u32 L | u32 heads | u32 head dim | u32 tokens
///   u32 vocab | u32 logit rows | u64 created
///   32 B key | u16 model-id length | model-id bytes
///   u32 tokens[n] | f64 positions[n]
///   K[L][n][d] | V[L][n][d] | logits[rows][vocab]   (f32)
///   u64 checksum = first 8 bytes of SHA-256 over everything before it
std::vector<std::uint8_t> serialize_record(const CacheRecord& record);
/// Throws CorruptRecord on a bad magic, truncated body or checksum mismatch.
CacheRecord parse_record(std::span<const std::uint8_t> bytes);

CacheRecord export_block(const KVBlock& block, const std::string& model_id,
                         const ModelShape& shape, const LogitBlock* logits = nullptr);
std::shared_ptr<const KVBlock> import_block(const CacheRecord& record);

struct CacheStoreOptions {
  std::optional<std::filesystem::path> directory;  ///< disk tier, one file per record
  std::size_t memory_budget = std::size_t{256} << 20;
};

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t puts = 0;
  std::uint64_t evictions = 0;
};

/// Two-tier KV store: LRU memory tier under a byte budget over an optional
/// directory of records. Thread-safe; disk writes are temp-file-then-rename.
class CacheStore {
 public:
  explicit CacheStore(ModelShape shape, CacheStoreOptions options = {});

  const ModelShape& shape() const noexcept { return shape_; }

  void put(const CacheRecord& record);
  std::optional<CacheRecord> get(const CacheKey& key);
  bool contains(const CacheKey& key);

  std::filesystem::path record_path(const CacheKey& key) const;
  std::size_t memory_bytes() const;
  std::size_t memory_entries() const;
  CacheStats stats() const;
  void clear_memory();

 private:
  struct Entry {
    std::shared_ptr<const std::vector<std::uint8_t>> bytes;
    std::list<CacheKey>::iterator lru;
  };
  struct KeyHash {
    std::size_t operator()(const CacheKey& k) const noexcept { return k.prefix64(); }
  };

  void validate(const CacheRecord& record) const;
  void remember(const CacheKey& key, std::shared_ptr<const std::vector<std::uint8_t>> bytes);

  ModelShape shape_;
  CacheStoreOptions options_;
  mutable std::mutex mutex_;
  std::list<CacheKey> lru_;  // front = most recent
  std::unordered_map<CacheKey, Entry, KeyHash> memory_;
  std::size_t memory_bytes_ = 0;
  CacheStats stats_;
};

}  // namespace superpose
