#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "superpose/digest.hpp"
#include "superpose/error.hpp"
#include "superpose/graph.hpp"
#include "superpose/positioning.hpp"

namespace superpose {

enum class PositionScheme { alibi, rotary };

std::string_view to_string(PositionScheme scheme);
PositionScheme position_scheme_from_string(std::string_view name);

/// Transformer dimensions used by the reference model, the cost model and the
/// KV memory formula.
struct ModelShape {
  std::string name;
  double params = 0.0;  ///< parameter count P
  std::uint32_t layers = 0;
  std::uint32_t d_model = 0;
  std::uint32_t heads = 0;
  std::uint32_t head_dim = 0;
  std::uint32_t vocab = 0;
  PositionScheme scheme = PositionScheme::alibi;
  std::uint32_t elem_bytes = 4;  ///< KV element width in bytes

  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

nlohmann::json to_json(const ModelShape& shape);
ModelShape model_shape_from_json(const nlohmann::json& doc);

/// Row-major (tokens x vocab) logits.
class LogitBlock {
 public:
  LogitBlock() = default;
  LogitBlock(std::size_t rows, std::size_t vocab);
  LogitBlock(std::size_t rows, std::size_t vocab, std::vector<float> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t vocab() const noexcept { return vocab_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const float> row(std::size_t r) const;
  std::span<float> row(std::size_t r);
  const std::vector<float>& data() const noexcept { return data_; }

  bool operator==(const LogitBlock&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t vocab_ = 0;
  std::vector<float> data_;
};

/// Key/value state for one contiguous run of tokens. In-process backends fill
/// `keys`/`values` ([layer][token * d_model + channel]); remote backends leave
/// them empty and reference server-side state through `remote_id`.
struct KVBlock {
  std::vector<TokenId> tokens;
  PositionVector positions;
  std::vector<std::vector<float>> keys;
  std::vector<std::vector<float>> values;
  std::string remote_id;
  Digest fingerprint;

  std::size_t size() const noexcept { return tokens.size(); }
};

enum class ConcatMode {
  /// Every part must start after the previous part ends.
  strict,
  /// Sibling paths of a fork may overlap in position; only the leading part
  /// (the shared root) must precede everything that follows it.
  superposed,
};

/// Immutable, cheaply copyable view over one or more KV blocks.
class KVCacheHandle {
 public:
  KVCacheHandle() = default;
  KVCacheHandle(std::string model_id, std::shared_ptr<const KVBlock> block);

  const std::string& model_id() const noexcept { return model_id_; }
  std::size_t size() const noexcept { return length_; }
  bool empty() const noexcept { return length_ == 0; }
  const std::vector<std::shared_ptr<const KVBlock>>& blocks() const noexcept { return blocks_; }

  PositionVector positions() const;
  std::vector<TokenId> tokens() const;
  double min_position() const;
  double max_position() const;

  /// Ancestry fingerprint: hash of model id plus the ancestor and own
  /// (token, position) streams, folded per block.
  Digest fingerprint() const;

  friend KVCacheHandle concat_caches(std::span<const KVCacheHandle> parts, ConcatMode mode);

 private:
  std::string model_id_;
  std::vector<std::shared_ptr<const KVBlock>> blocks_;
  std::size_t length_ = 0;
};

KVCacheHandle concat_caches(std::span<const KVCacheHandle> parts,
                            ConcatMode mode = ConcatMode::strict);

/// Fingerprint of the KV produced by extending `prefix` with (tokens, positions).
Digest derive_fingerprint(std::string_view model_id, std::span<const KVCacheHandle> prefix,
                          std::span<const TokenId> tokens, const PositionVector& positions);

struct ExtendResult {
  KVCacheHandle cache;
  LogitBlock logits;
  /// Mean attention mass on each prefix handle, then on the new segment itself,
  /// averaged over layers, heads and new tokens. Empty unless requested.
  std::vector<double> attention;
};

struct BatchOutcome {
  std::optional<ExtendResult> result;
  std::optional<Error> error;

  bool ok() const noexcept { return result.has_value(); }
};

struct BackendCalls {
  std::uint64_t extend = 0;  ///< every single-prefix forward, batched or not
  std::uint64_t batch = 0;   ///< extend_batch invocations
};

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const ModelShape& shape() const = 0;
  virtual const std::string& model_id() const = 0;
  virtual bool supports_attention_summary() const = 0;
  /// True when KV tensors live in-process and can be persisted.
  virtual bool exports_tensors() const { return false; }
  /// Frees backend-side state for the handle's blocks (no-op in-process).
  virtual void release(const KVCacheHandle&) {}

  /// Validates the request and runs one forward over `tokens` attending densely
  /// to every prefix token and causally within the new segment.
  ExtendResult extend(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                      const PositionVector& positions, bool want_attention = false);

  /// Same payload fanned across many prefixes. Element i is exactly
  /// extend(prefixes[i], tokens, positions); `parallel` only changes scheduling.
  std::vector<BatchOutcome> extend_batch(std::span<const std::vector<KVCacheHandle>> prefixes,
                                         std::span<const TokenId> tokens,
                                         const PositionVector& positions,
                                         bool want_attention = false, bool parallel = false);

  BackendCalls calls() const noexcept;
  void reset_calls() noexcept;

 protected:
  virtual ExtendResult do_extend(std::span<const KVCacheHandle> prefix,
                                 std::span<const TokenId> tokens,
                                 const PositionVector& positions, bool want_attention) = 0;
  /// Whether do_extend may run concurrently on one backend instance.
  virtual bool reentrant() const { return true; }

 private:
  void validate(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                const PositionVector& positions, bool want_attention) const;

  std::atomic<std::uint64_t> extend_calls_{0};
  std::atomic<std::uint64_t> batch_calls_{0};
};

inline ExtendResult lm_extend(Backend& backend, std::span<const KVCacheHandle> prefix,
                              std::span<const TokenId> tokens, const PositionVector& positions,
                              bool want_attention = false) {
  return backend.extend(prefix, tokens, positions, want_attention);
}

std::vector<BatchOutcome> lmp_extend_batch(Backend& backend,
                                           std::span<const std::vector<KVCacheHandle>> prefixes,
                                           std::span<const TokenId> tokens,
                                           const PositionVector& positions,
                                           bool want_attention = false, bool parallel = false);

/// Throws the first per-element error, otherwise moves the results out.
std::vector<ExtendResult> unwrap(std::vector<BatchOutcome> outcomes);

/// Greedy pick: highest logit, lowest token id on ties.
TokenId argmax_token(std::span<const float> logits);

}  // namespace superpose
