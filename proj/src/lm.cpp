#include "superpose/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace superpose {

std::string_view to_string(PositionScheme scheme) {
  return scheme == PositionScheme::alibi ? "alibi" : "rotary";
}

PositionScheme position_scheme_from_string(std::string_view name) {
  if (name == "alibi") return PositionScheme::alibi;
  if (name == "rotary") return PositionScheme::rotary;
  throw Error(ErrorCode::invalid_argument, "unknown position scheme '" + std::string(name) + "'");
}

void ModelShape::validate() const {
  if (layers == 0 || d_model == 0 || heads == 0 || head_dim == 0 || vocab == 0 ||
      elem_bytes == 0 || !(params > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "model shape '" + name + "' has a zero dimension");
  }
  if (d_model != heads * head_dim) {
    throw Error(ErrorCode::invalid_argument, "model shape '" + name + "': d_model != heads * head_dim");
  }
}

nlohmann::json to_json(const ModelShape& shape) {
  return {{"name", shape.name},         {"params", shape.params},
          {"layers", shape.layers},     {"d_model", shape.d_model},
          {"heads", shape.heads},       {"head_dim", shape.head_dim},
          {"vocab", shape.vocab},       {"position_scheme", to_string(shape.scheme)},
          {"elem_bytes", shape.elem_bytes}};
}

ModelShape model_shape_from_json(const nlohmann::json& doc) {
  try {
    ModelShape s;
    s.name = doc.value("name", std::string{});
    s.params = doc.at("params").get<double>();
    s.layers = doc.at("layers").get<std::uint32_t>();
    s.d_model = doc.at("d_model").get<std::uint32_t>();
    s.heads = doc.at("heads").get<std::uint32_t>();
    s.head_dim = doc.at("head_dim").get<std::uint32_t>();
    s.vocab = doc.at("vocab").get<std::uint32_t>();
    s.scheme = position_scheme_from_string(doc.at("position_scheme").get<std::string>());
    s.elem_bytes = doc.at("elem_bytes").get<std::uint32_t>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_error, std::string("model shape: ") + e.what());
  }
}

LogitBlock::LogitBlock(std::size_t rows, std::size_t vocab)
    : rows_(rows), vocab_(vocab), data_(rows * vocab, 0.0f) {}

LogitBlock::LogitBlock(std::size_t rows, std::size_t vocab, std::vector<float> data)
    : rows_(rows), vocab_(vocab), data_(std::move(data)) {
  if (data_.size() != rows_ * vocab_) {
    throw Error(ErrorCode::dimension_mismatch, "logit data does not match rows x vocab");
  }
}

std::span<const float> LogitBlock::row(std::size_t r) const {
  return std::span<const float>(data_).subspan(r * vocab_, vocab_);
}

std::span<float> LogitBlock::row(std::size_t r) {
  return std::span<float>(data_).subspan(r * vocab_, vocab_);
}

KVCacheHandle::KVCacheHandle(std::string model_id, std::shared_ptr<const KVBlock> block)
    : model_id_(std::move(model_id)) {
  length_ = block->size();
  blocks_.push_back(std::move(block));
}

PositionVector KVCacheHandle::positions() const {
  PositionVector out;
  out.reserve(length_);
  for (const auto& b : blocks_) out.insert(out.end(), b->positions.begin(), b->positions.end());
  return out;
}

std::vector<TokenId> KVCacheHandle::tokens() const {
  std::vector<TokenId> out;
  out.reserve(length_);
  for (const auto& b : blocks_) out.insert(out.end(), b->tokens.begin(), b->tokens.end());
  return out;
}

double KVCacheHandle::min_position() const {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& b : blocks_) {
    for (double p : b->positions) lo = std::min(lo, p);
  }
  return lo;
}

double KVCacheHandle::max_position() const {
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& b : blocks_) {
    for (double p : b->positions) hi = std::max(hi, p);
  }
  return hi;
}

Digest KVCacheHandle::fingerprint() const {
  if (blocks_.size() == 1) return blocks_.front()->fingerprint;
  Sha256 h;
  h.update("concat").update_u32(static_cast<std::uint32_t>(model_id_.size())).update(model_id_);
  h.update_u64(blocks_.size());
  for (const auto& b : blocks_) h.update(b->fingerprint.bytes);
  return h.finish();
}

KVCacheHandle concat_caches(std::span<const KVCacheHandle> parts, ConcatMode mode) {
  KVCacheHandle out;
  bool first = true;
  double lead_max = 0.0;
  double prev_max = 0.0;
  for (const auto& part : parts) {
    if (part.empty()) continue;
    if (first) {
      out.model_id_ = part.model_id();
      lead_max = part.max_position();
      prev_max = lead_max;
      first = false;
    } else {
      if (part.model_id() != out.model_id_) {
        throw Error(ErrorCode::model_mismatch,
                    "cannot concatenate caches of '" + out.model_id_ + "' and '" +
                        part.model_id() + "'");
      }
      const double bound = mode == ConcatMode::strict ? prev_max : lead_max;
      if (!(part.min_position() > bound)) {
        throw Error(ErrorCode::position_order_violation,
                    "cache part starts at " + std::to_string(part.min_position()) +
                        " but must follow position " + std::to_string(bound));
      }
      prev_max = part.max_position();
    }
    out.blocks_.insert(out.blocks_.end(), part.blocks().begin(), part.blocks().end());
    out.length_ += part.size();
  }
  return out;
}

Digest derive_fingerprint(std::string_view model_id, std::span<const KVCacheHandle> prefix,
                          std::span<const TokenId> tokens, const PositionVector& positions) {
  Sha256 h;
  h.update("extend").update_u32(static_cast<std::uint32_t>(model_id.size())).update(model_id);
  std::uint64_t block_count = 0;
  for (const auto& p : prefix) block_count += p.blocks().size();
  h.update_u64(block_count);
  for (const auto& p : prefix) {
    for (const auto& b : p.blocks()) h.update(b->fingerprint.bytes);
  }
  h.update_u64(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    h.update_u32(static_cast<std::uint32_t>(tokens[i]));
    h.update_f64(positions[i]);
  }
  return h.finish();
}

void Backend::validate(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                       const PositionVector& positions, bool want_attention) const {
  if (tokens.empty()) throw Error(ErrorCode::empty_segment, "extend with no tokens");
  if (positions.size() != tokens.size()) {
    throw Error(ErrorCode::invalid_argument, "positions and tokens differ in length");
  }
  const auto vocab = static_cast<TokenId>(shape().vocab);
  for (TokenId t : tokens) {
    if (t < 0 || t >= vocab) {
      throw Error(ErrorCode::vocab_overflow,
                  "token " + std::to_string(t) + " outside vocab of " + std::to_string(vocab));
    }
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!std::isfinite(positions[i]) || positions[i] < 0.0) {
      throw Error(ErrorCode::position_order_violation, "positions must be finite and non-negative");
    }
    if (i > 0 && !(positions[i] > positions[i - 1])) {
      throw Error(ErrorCode::position_order_violation,
                  "positions must strictly increase within a segment");
    }
  }
  for (const auto& p : prefix) {
    if (p.empty()) continue;
    if (p.model_id() != model_id()) {
      throw Error(ErrorCode::model_mismatch,
                  "prefix from '" + p.model_id() + "' used with '" + model_id() + "'");
    }
    if (!(p.max_position() < positions.front())) {
      throw Error(ErrorCode::position_order_violation,
                  "prefix reaches position " + std::to_string(p.max_position()) +
                      " but new tokens start at " + std::to_string(positions.front()));
    }
  }
  if (want_attention && !supports_attention_summary()) {
    throw Error(ErrorCode::summaries_unavailable, "backend does not expose attention");
  }
}

ExtendResult Backend::extend(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                             const PositionVector& positions, bool want_attention) {
  validate(prefix, tokens, positions, want_attention);
  extend_calls_.fetch_add(1, std::memory_order_relaxed);
  return do_extend(prefix, tokens, positions, want_attention);
}

std::vector<BatchOutcome> Backend::extend_batch(
    std::span<const std::vector<KVCacheHandle>> prefixes, std::span<const TokenId> tokens,
    const PositionVector& positions, bool want_attention, bool parallel) {
  batch_calls_.fetch_add(1, std::memory_order_relaxed);
  std::vector<BatchOutcome> out(prefixes.size());
  auto run_one = [&](std::size_t i) {
    try {
      out[i].result = extend(prefixes[i], tokens, positions, want_attention);
    } catch (const Error& e) {
      out[i].error = e;
    }
  };

  if (!parallel || !reentrant() || prefixes.size() < 2) {
    for (std::size_t i = 0; i < prefixes.size(); ++i) run_one(i);
    return out;
  }

  const std::size_t workers =
      std::min<std::size_t>(prefixes.size(), std::max(2u, std::thread::hardware_concurrency()));
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < prefixes.size(); i = next.fetch_add(1)) run_one(i);
    });
  }
  pool.clear();  // join
  return out;
}

BackendCalls Backend::calls() const noexcept {
  return {extend_calls_.load(std::memory_order_relaxed), batch_calls_.load(std::memory_order_relaxed)};
}

void Backend::reset_calls() noexcept {
  extend_calls_.store(0);
  batch_calls_.store(0);
}

std::vector<BatchOutcome> lmp_extend_batch(Backend& backend,
                                           std::span<const std::vector<KVCacheHandle>> prefixes,
                                           std::span<const TokenId> tokens,
                                           const PositionVector& positions, bool want_attention,
                                           bool parallel) {
  return backend.extend_batch(prefixes, tokens, positions, want_attention, parallel);
}

std::vector<ExtendResult> unwrap(std::vector<BatchOutcome> outcomes) {
  std::vector<ExtendResult> out;
  out.reserve(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!outcomes[i].ok()) {
      const Error& e = *outcomes[i].error;
      throw Error(e.code(), "batch element " + std::to_string(i) + ": " + e.what());
    }
    out.push_back(std::move(*outcomes[i].result));
  }
  return out;
}

TokenId argmax_token(std::span<const float> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

}  // namespace superpose
