#include "superpose/cache_store.hpp"

#include <unistd.h>

#include <atomic>
#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>

namespace superpose {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'P', 'K', 'V'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
                                                      std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>, T>>;
    const U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void bytes(std::span<const std::uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get() {
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
                                                      std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>, T>>;
    need(sizeof(U));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(ErrorCode::corrupt_record, "record is truncated");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(std::span<const std::uint8_t> bytes) { return Sha256::of(bytes).prefix64(); }

std::uint64_t model_hash(const std::string& model_id) { return Sha256::of(model_id).prefix64(); }

}  // namespace

std::size_t memory_estimate(const ModelShape& shape, std::size_t token_count) {
  return std::size_t{2} * shape.layers * shape.d_model * shape.elem_bytes * token_count;
}

std::vector<std::uint8_t> serialize_record(const CacheRecord& r) {
  const std::size_t n = r.tokens.size();
  const std::size_t d = std::size_t{r.heads} * r.head_dim;
  if (r.positions.size() != n || r.keys.size() != r.layers * n * d || r.values.size() != r.keys.size()) {
    throw Error(ErrorCode::dimension_mismatch, "record tensors do not match its header");
  }
  if (r.model_id.size() > 0xffff) throw Error(ErrorCode::invalid_argument, "model id too long");
  Writer w;
  w.bytes(kMagic);
  w.put<std::uint16_t>(kRecordVersion);
  w.put<std::uint8_t>(kHashSha256);
  w.put<std::uint8_t>(kElemF32);
  w.put<std::uint64_t>(model_hash(r.model_id));
  w.put<std::uint32_t>(r.layers);
  w.put<std::uint32_t>(r.heads);
  w.put<std::uint32_t>(r.head_dim);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.logits.vocab()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(r.logits.rows()));
  w.put<std::uint64_t>(r.created_unix);
  w.bytes(r.key.bytes);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(r.model_id.size()));
  w.bytes({reinterpret_cast<const std::uint8_t*>(r.model_id.data()), r.model_id.size()});
  for (TokenId t : r.tokens) w.put<std::uint32_t>(static_cast<std::uint32_t>(t));
  for (double p : r.positions) w.put<double>(p);
  for (float v : r.keys) w.put<float>(v);
  for (float v : r.values) w.put<float>(v);
  for (float v : r.logits.data()) w.put<float>(v);
  w.put<std::uint64_t>(checksum(w.out));
  return std::move(w.out);
}

CacheRecord parse_record(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw Error(ErrorCode::corrupt_record, "record is truncated");
  const auto body = bytes.first(bytes.size() - 8);
  Reader tail(bytes.last(8));
  if (tail.get<std::uint64_t>() != checksum(body)) {
    throw Error(ErrorCode::corrupt_record, "checksum mismatch");
  }
  Reader in(body);
  if (std::memcmp(in.bytes(4).data(), kMagic, 4) != 0) throw Error(ErrorCode::corrupt_record, "bad magic");
  if (in.get<std::uint16_t>() != kRecordVersion) throw Error(ErrorCode::corrupt_record, "unknown record version");
  if (in.get<std::uint8_t>() != kHashSha256) throw Error(ErrorCode::corrupt_record, "unknown hash function");
  if (in.get<std::uint8_t>() != kElemF32) throw Error(ErrorCode::corrupt_record, "unknown element type");
  CacheRecord r;
  const auto mhash = in.get<std::uint64_t>();
  r.layers = in.get<std::uint32_t>();
  r.heads = in.get<std::uint32_t>();
  r.head_dim = in.get<std::uint32_t>();
  const std::size_t n = in.get<std::uint32_t>();
  const std::size_t vocab = in.get<std::uint32_t>();
  const std::size_t rows = in.get<std::uint32_t>();
  r.created_unix = in.get<std::uint64_t>();
  const auto key = in.bytes(32);
  std::copy(key.begin(), key.end(), r.key.bytes.begin());
  const auto id = in.bytes(in.get<std::uint16_t>());
  r.model_id.assign(id.begin(), id.end());
  if (model_hash(r.model_id) != mhash) throw Error(ErrorCode::corrupt_record, "model id hash mismatch");

  const std::size_t elems = std::size_t{r.layers} * n * r.heads * r.head_dim;
  const std::size_t expected = n * 12 + (2 * elems + rows * vocab) * 4;
  if (body.size() - in.position() != expected) {
    throw Error(ErrorCode::corrupt_record, "record body length does not match header");
  }
  r.tokens.resize(n);
  for (auto& t : r.tokens) t = static_cast<TokenId>(in.get<std::uint32_t>());
  r.positions.resize(n);
  for (auto& p : r.positions) p = in.get<double>();
  r.keys.resize(elems);
  for (auto& v : r.keys) v = in.get<float>();
  r.values.resize(elems);
  for (auto& v : r.values) v = in.get<float>();
  std::vector<float> logits(rows * vocab);
  for (auto& v : logits) v = in.get<float>();
  if (rows > 0) r.logits = LogitBlock(rows, vocab, std::move(logits));
  return r;
}

CacheRecord export_block(const KVBlock& block, const std::string& model_id, const ModelShape& shape,
                         const LogitBlock* logits) {
  if (block.keys.size() != shape.layers || block.values.size() != shape.layers) {
    throw Error(ErrorCode::dimension_mismatch, "block has no tensors for every layer");
  }
  CacheRecord r;
  r.key = block.fingerprint;
  r.model_id = model_id;
  r.layers = shape.layers;
  r.heads = shape.heads;
  r.head_dim = shape.head_dim;
  r.created_unix = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
  r.tokens = block.tokens;
  r.positions = block.positions;
  for (std::uint32_t l = 0; l < shape.layers; ++l) {
    r.keys.insert(r.keys.end(), block.keys[l].begin(), block.keys[l].end());
    r.values.insert(r.values.end(), block.values[l].begin(), block.values[l].end());
  }
  if (logits != nullptr) r.logits = *logits;
  return r;
}

std::shared_ptr<const KVBlock> import_block(const CacheRecord& r) {
  auto block = std::make_shared<KVBlock>();
  block->tokens = r.tokens;
  block->positions = r.positions;
  block->fingerprint = r.key;
  const std::size_t per_layer = r.tokens.size() * r.heads * r.head_dim;
  for (std::uint32_t l = 0; l < r.layers; ++l) {
    block->keys.emplace_back(r.keys.begin() + l * per_layer, r.keys.begin() + (l + 1) * per_layer);
    block->values.emplace_back(r.values.begin() + l * per_layer, r.values.begin() + (l + 1) * per_layer);
  }
  return block;
}

CacheStore::CacheStore(ModelShape shape, CacheStoreOptions options)
    : shape_(std::move(shape)), options_(std::move(options)) {
  if (options_.directory) std::filesystem::create_directories(*options_.directory);
}

std::filesystem::path CacheStore::record_path(const CacheKey& key) const {
  if (!options_.directory) return {};
  return *options_.directory / (key.hex() + ".spkv");
}

void CacheStore::validate(const CacheRecord& r) const {
  const std::size_t n = r.tokens.size();
  if (r.layers != shape_.layers || r.heads != shape_.heads || r.head_dim != shape_.head_dim) {
    throw Error(ErrorCode::dimension_mismatch,
                "record is " + std::to_string(r.layers) + "x" + std::to_string(r.heads) + "x" +
                    std::to_string(r.head_dim) + ", store expects " + std::to_string(shape_.layers) +
                    "x" + std::to_string(shape_.heads) + "x" + std::to_string(shape_.head_dim));
  }
  if (r.positions.size() != n || r.tensor_bytes() != memory_estimate(shape_, n)) {
    throw Error(ErrorCode::dimension_mismatch, "record tensors do not cover its tokens");
  }
  if (!r.logits.empty() && (r.logits.rows() != n || r.logits.vocab() != shape_.vocab)) {
    throw Error(ErrorCode::dimension_mismatch, "record logits do not match tokens x vocab");
  }
}

void CacheStore::remember(const CacheKey& key, std::shared_ptr<const std::vector<std::uint8_t>> bytes) {
  if (auto it = memory_.find(key); it != memory_.end()) {
    memory_bytes_ -= it->second.bytes->size();
    lru_.erase(it->second.lru);
    memory_.erase(it);
  }
  if (bytes->size() > options_.memory_budget) return;
  while (memory_bytes_ + bytes->size() > options_.memory_budget && !lru_.empty()) {
    auto victim = memory_.find(lru_.back());
    memory_bytes_ -= victim->second.bytes->size();
    memory_.erase(victim);
    lru_.pop_back();
    ++stats_.evictions;
  }
  lru_.push_front(key);
  memory_bytes_ += bytes->size();
  memory_.emplace(key, Entry{std::move(bytes), lru_.begin()});
}

void CacheStore::put(const CacheRecord& record) {
  validate(record);
  auto bytes = std::make_shared<const std::vector<std::uint8_t>>(serialize_record(record));
  if (!options_.directory && bytes->size() > options_.memory_budget) {
    throw Error(ErrorCode::storage_full, "record of " + std::to_string(bytes->size()) +
                                             " bytes exceeds the memory budget and there is no disk tier");
  }
  if (options_.directory) {
    static std::atomic<std::uint64_t> counter{0};
    const auto final_path = record_path(record.key);
    auto temp = final_path;
    temp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    {
      std::ofstream out(temp, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(bytes->data()), static_cast<std::streamsize>(bytes->size()));
      out.flush();
      if (!out) {
        std::error_code ignored;
        std::filesystem::remove(temp, ignored);
        throw Error(ErrorCode::storage_full, "cannot write " + temp.string());
      }
    }
    std::error_code ec;
    std::filesystem::rename(temp, final_path, ec);
    if (ec) {
      std::filesystem::remove(temp, ec);
      throw Error(ErrorCode::storage_full, "cannot publish " + final_path.string());
    }
  }
  std::lock_guard lock(mutex_);
  ++stats_.puts;
  remember(record.key, std::move(bytes));
}

std::optional<CacheRecord> CacheStore::get(const CacheKey& key) {
  std::shared_ptr<const std::vector<std::uint8_t>> bytes;
  {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.lru);
      bytes = it->second.bytes;
    }
  }
  if (!bytes && options_.directory) {
    std::ifstream in(record_path(key), std::ios::binary);
    if (in) {
      auto data = std::make_shared<std::vector<std::uint8_t>>(std::istreambuf_iterator<char>(in),
                                                              std::istreambuf_iterator<char>());
      bytes = data;
      auto record = parse_record(*bytes);
      if (record.key != key) throw Error(ErrorCode::corrupt_record, "record key does not match its file");
      std::lock_guard lock(mutex_);
      ++stats_.hits;
      remember(key, bytes);
      return record;
    }
  }
  {
    std::lock_guard lock(mutex_);
    if (!bytes) {
      ++stats_.misses;
      return std::nullopt;
    }
    ++stats_.hits;
  }
  return parse_record(*bytes);
}

bool CacheStore::contains(const CacheKey& key) {
  {
    std::lock_guard lock(mutex_);
    if (memory_.count(key) != 0) return true;
  }
  return options_.directory && std::filesystem::exists(record_path(key));
}

std::size_t CacheStore::memory_bytes() const {
  std::lock_guard lock(mutex_);
  return memory_bytes_;
}

std::size_t CacheStore::memory_entries() const {
  std::lock_guard lock(mutex_);
  return memory_.size();
}

CacheStats CacheStore::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

void CacheStore::clear_memory() {
  std::lock_guard lock(mutex_);
  memory_.clear();
  lru_.clear();
  memory_bytes_ = 0;
}

}  // namespace superpose
