#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "superpose/cache_store.hpp"
#include "superpose/cost_model.hpp"
#include "superpose/lm.hpp"
#include "superpose/positioning.hpp"
#include "superpose/saliency.hpp"

namespace superpose {

struct ServingFlags {
  bool use_cache = true;
  bool parallel_paths = false;
  bool prune = true;
};

struct ServingPlan {
  PositioningStrategy positioning = PositioningStrategy::equilibrium;
  SaliencyMetric saliency = SaliencyMetric::bayesian;
  BayesianVariant variant = BayesianVariant::query_likelihood;
  bool include_prior = true;
  std::size_t top_k = 1;
  /// When set, keep paths whose posterior reaches it instead of the top k.
  std::optional<double> threshold;
  /// Superposition factor; 0 puts one document on each path.
  double factor = 0.0;
  std::size_t iterations = 1;
  ServingFlags flags;
  std::size_t max_new_tokens = 64;
  TokenId eos = 0;

  void validate() const;
};

nlohmann::json to_json(const ServingPlan& plan);
ServingPlan serving_plan_from_json(const nlohmann::json& doc);

/// Output of offline preprocessing: positioned preamble and documents with
/// their KV and logits. Documents are already grouped by the factor.
struct Corpus {
  PositioningStrategy positioning = PositioningStrategy::equilibrium;
  double factor = 0.0;
  std::vector<TokenId> preamble;
  std::vector<std::vector<TokenId>> documents;
  PositionVector preamble_positions;
  std::vector<PositionVector> document_positions;
  double query_start = 0.0;

  KVCacheHandle preamble_cache;
  LogitBlock preamble_logits;
  std::vector<KVCacheHandle> document_caches;
  std::vector<LogitBlock> document_logits;

  std::size_t path_count() const noexcept { return documents.size(); }
};

struct ServingResult {
  std::vector<TokenId> response;
  /// Scores of the last scoring step, in path order.
  std::vector<PathScore> scores;
  /// Kept paths per step, ascending path index.
  std::vector<std::vector<std::size_t>> steps;
  /// All kept paths in the order their caches were appended.
  std::vector<std::size_t> selected;
  LogitBlock postamble_logits;
  LogitBlock response_logits;  ///< one row per decode step that produced a token
  PositionVector response_positions;
  CostPlan ledger;
  double cycles = 0.0;
  std::size_t path_evaluations = 0;
  BackendCalls calls;
  std::vector<std::string> warnings;
  double elapsed_ms = 0.0;
};

/// Omits timing when `include_timing` is false so the output is reproducible.
nlohmann::json to_json(const ServingResult& result, const ModelShape& shape, bool include_timing = true);

/// Runs offline preprocessing and online serving against one backend. KV for
/// the preamble and documents is reused through the cache store when the
/// backend exports tensors, otherwise through an in-memory memo.
class Engine {
 public:
  explicit Engine(Backend& backend, CacheStore* store = nullptr);

  Backend& backend() noexcept { return backend_; }

  Corpus preprocess(std::span<const TokenId> preamble, std::span<const std::vector<TokenId>> documents,
                    PositioningStrategy positioning, double factor = 0.0);

  ServingResult serve(const Corpus& corpus, const ServingPlan& plan, std::span<const TokenId> query,
                      std::span<const TokenId> postamble);

  /// Superpose, score, keep top k, append to the running prefix; t times.
  ServingResult serve_iterative(const Corpus& corpus, const ServingPlan& plan,
                                std::span<const TokenId> query, std::span<const TokenId> postamble);

  /// Drops memoised handles (releasing backend state).
  void clear_memo();

 private:
  struct Computed {
    KVCacheHandle cache;
    LogitBlock logits;
    bool hit = false;
  };

  Computed extend_cached(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                         const PositionVector& positions);
  ServingResult run(const Corpus& corpus, const ServingPlan& plan, std::span<const TokenId> query,
                    std::span<const TokenId> postamble, std::size_t iterations);

  Backend& backend_;
  CacheStore* store_;
  std::mutex memo_mutex_;
  std::map<Digest, std::pair<KVCacheHandle, LogitBlock>> memo_;
};

}  // namespace superpose
