#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "superpose/cache_store.hpp"
#include "superpose/reference_model.hpp"

using namespace superpose;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("spkv-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

class CacheStoreTest : public ::testing::Test {
 protected:
  ReferenceBackend backend;

  ExtendResult document(std::uint64_t seed, std::size_t len, double start = 0.0, double step = 1.0) {
    std::mt19937_64 rng(seed);
    return backend.extend({}, fixtures::random_tokens(rng, len), arange_positions(start, step, len));
  }

  CacheRecord record_of(const ExtendResult& r, bool with_logits = true) {
    return export_block(*r.cache.blocks().front(), backend.model_id(), backend.shape(),
                        with_logits ? &r.logits : nullptr);
  }

  static ErrorCode code_of(const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::invalid_argument;
  }
};

}  // namespace

TEST_F(CacheStoreTest, RoundTripIsBitIdentical) {
  const auto doc = document(1, 13, 4.0, 0.625);
  const auto record = record_of(doc);
  CacheStore store(backend.shape());
  store.put(record);
  const auto back = store.get(record.key);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(*back, record);
  const auto block = import_block(*back);
  const auto& original = *doc.cache.blocks().front();
  EXPECT_EQ(block->keys, original.keys);
  EXPECT_EQ(block->values, original.values);
  EXPECT_EQ(block->positions, original.positions);
  EXPECT_EQ(block->fingerprint, original.fingerprint);
  EXPECT_EQ(parse_record(serialize_record(record)), record);
}

TEST_F(CacheStoreTest, ImportedBlockDecodesLikeTheOriginal) {
  const auto doc = document(2, 6);
  const auto imported = KVCacheHandle(backend.model_id(), import_block(record_of(doc)));
  const std::vector<TokenId> next{42, 43};
  const auto a = backend.extend(std::vector{doc.cache}, next, PositionVector{6, 7});
  const auto b = backend.extend(std::vector{imported}, next, PositionVector{6, 7});
  EXPECT_EQ(a.logits, b.logits);
}

TEST_F(CacheStoreTest, PutIsIdempotent) {
  const auto record = record_of(document(3, 5));
  CacheStore store(backend.shape());
  store.put(record);
  const auto bytes = store.memory_bytes();
  store.put(record);
  EXPECT_EQ(store.memory_entries(), 1u);
  EXPECT_EQ(store.memory_bytes(), bytes);
  EXPECT_EQ(*store.get(record.key), record);
}

TEST_F(CacheStoreTest, ShapeMismatchRejected) {
  const auto record = record_of(document(4, 5));
  CacheStore store(reference_shape(PositionScheme::alibi));
  auto other = backend.shape();
  other.layers = 3;
  CacheStore wrong(other);
  EXPECT_EQ(code_of([&] { wrong.put(record); }), ErrorCode::dimension_mismatch);
  auto truncated = record;
  truncated.keys.pop_back();
  EXPECT_EQ(code_of([&] { store.put(truncated); }), ErrorCode::dimension_mismatch);
}

TEST_F(CacheStoreTest, UnknownKeyIsAbsent) {
  CacheStore store(backend.shape());
  EXPECT_FALSE(store.get(Sha256::of("nothing")).has_value());
  EXPECT_FALSE(store.contains(Sha256::of("nothing")));
  EXPECT_EQ(store.stats().misses, 1u);
}

TEST_F(CacheStoreTest, FlippedByteIsCorrupt) {
  const auto bytes = serialize_record(record_of(document(5, 4)));
  for (std::size_t at : {std::size_t{0}, std::size_t{17}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[at] ^= 0x01;
    EXPECT_EQ(code_of([&] { parse_record(bad); }), ErrorCode::corrupt_record) << "byte " << at;
  }
  auto cut = bytes;
  cut.resize(cut.size() - 9);
  EXPECT_EQ(code_of([&] { parse_record(cut); }), ErrorCode::corrupt_record);
}

TEST_F(CacheStoreTest, CorruptFileOnDiskIsReported) {
  TempDir dir;
  const auto record = record_of(document(6, 4));
  {
    CacheStore store(backend.shape(), {.directory = dir.path});
    store.put(record);
  }
  const auto path = dir.path / (record.key.hex() + ".spkv");
  ASSERT_TRUE(std::filesystem::exists(path));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
  }
  CacheStore fresh(backend.shape(), {.directory = dir.path});
  EXPECT_EQ(code_of([&] { fresh.get(record.key); }), ErrorCode::corrupt_record);
}

TEST_F(CacheStoreTest, ShiftedPositionsAreADifferentKey) {
  CacheStore store(backend.shape());
  store.put(record_of(document(7, 5, 0.0)));
  const auto shifted = document(7, 5, 1.0);
  EXPECT_FALSE(store.get(shifted.cache.fingerprint()).has_value());
  EXPECT_TRUE(store.get(document(7, 5, 0.0).cache.fingerprint()).has_value());
}

TEST_F(CacheStoreTest, KeyDependsOnAncestry) {
  const auto p1 = document(8, 3), p2 = document(9, 3);
  const std::vector<TokenId> doc{1, 2, 3};
  const auto a = backend.extend(std::vector{p1.cache}, doc, PositionVector{3, 4, 5});
  const auto b = backend.extend(std::vector{p2.cache}, doc, PositionVector{3, 4, 5});
  EXPECT_NE(a.cache.fingerprint(), b.cache.fingerprint());
  EXPECT_NE(a.cache.blocks().back()->keys, b.cache.blocks().back()->keys);
}

TEST_F(CacheStoreTest, MemoryEstimate) {
  const auto shape = backend.shape();
  EXPECT_EQ(memory_estimate(shape, 960), 491520u);
  EXPECT_EQ(memory_estimate(shape, 0), 0u);
  EXPECT_EQ(memory_estimate(shape, 1), 512u);
  EXPECT_EQ(record_of(document(10, 9)).tensor_bytes(), memory_estimate(shape, 9));
}

TEST_F(CacheStoreTest, LruEvictsOldest) {
  const auto a = record_of(document(11, 8)), b = record_of(document(12, 8)), c = record_of(document(13, 8));
  const auto size = serialize_record(a).size();
  CacheStore store(backend.shape(), {.memory_budget = 2 * size + size / 2});
  store.put(a);
  store.put(b);
  ASSERT_TRUE(store.get(a.key));  // a becomes most recent
  store.put(c);
  EXPECT_EQ(store.memory_entries(), 2u);
  EXPECT_TRUE(store.contains(a.key));
  EXPECT_FALSE(store.contains(b.key));
  EXPECT_TRUE(store.contains(c.key));
  EXPECT_EQ(store.stats().evictions, 1u);
  EXPECT_LE(store.memory_bytes(), 2 * size + size / 2);
}

TEST_F(CacheStoreTest, StorageFullWithoutDiskTier) {
  const auto record = record_of(document(14, 16));
  CacheStore store(backend.shape(), {.memory_budget = 64});
  EXPECT_EQ(code_of([&] { store.put(record); }), ErrorCode::storage_full);
}

TEST_F(CacheStoreTest, DiskTierSurvivesMemoryLoss) {
  TempDir dir;
  const auto record = record_of(document(15, 7));
  CacheStore store(backend.shape(), {.directory = dir.path, .memory_budget = 64});
  store.put(record);  // too big for memory, lands on disk only
  EXPECT_EQ(store.memory_entries(), 0u);
  EXPECT_EQ(store.record_path(record.key), dir.path / (record.key.hex() + ".spkv"));
  EXPECT_EQ(*store.get(record.key), record);
  CacheStore reopened(backend.shape(), {.directory = dir.path});
  EXPECT_EQ(*reopened.get(record.key), record);
  for (const auto& entry : std::filesystem::directory_iterator(dir.path))
    EXPECT_EQ(entry.path().extension(), ".spkv");
}

TEST_F(CacheStoreTest, RecordWithoutLogits) {
  const auto record = record_of(document(16, 3), false);
  EXPECT_TRUE(record.logits.empty());
  EXPECT_EQ(parse_record(serialize_record(record)), record);
}
