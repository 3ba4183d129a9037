#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "superpose/lm.hpp"

namespace superpose {

/// One forward over `n_new` tokens that attend to `n_prefix` earlier tokens.
struct SegmentEval {
  std::string label;
  std::size_t n_new = 0;
  std::size_t n_prefix = 0;
  bool cached = false;
};

struct Branch {
  std::vector<SegmentEval> segments;
};

/// Branches of a stage run side by side; stages run one after another.
struct Stage {
  std::string label;
  std::vector<Branch> branches;
};

struct CostPlan {
  std::vector<Stage> stages;
};

nlohmann::json to_json(const CostPlan& plan);

/// P * n_new + 2 * L * d_model * n_new * n_ctx, with n_ctx the mean context a
/// new token sees.
double segment_macs(const ModelShape& shape, double n_new, double n_ctx);

/// segment_macs with n_ctx = n_prefix + (n_new + 1) / 2; zero when cached.
double segment_cost(const ModelShape& shape, const SegmentEval& segment);

double stage_cycles(const ModelShape& shape, const Stage& stage);

/// Sum over stages of the most expensive branch.
double compute_cycles(const ModelShape& shape, const CostPlan& plan);

/// Token counts of one RAG request.
struct WorkloadSpec {
  std::string name;
  std::size_t preamble = 0;
  std::vector<std::size_t> documents;
  std::size_t query = 0;
  std::size_t postamble = 0;
  std::size_t response = 0;

  void validate() const;
  std::size_t document_tokens() const;
};

WorkloadSpec uniform_workload(std::string name, std::size_t preamble, std::size_t m,
                              std::size_t doc_length, std::size_t query, std::size_t postamble,
                              std::size_t response);

nlohmann::json to_json(const WorkloadSpec& workload);
WorkloadSpec workload_from_json(const nlohmann::json& doc);

/// Merges document lengths the same way group_documents merges segments.
WorkloadSpec apply_factor(const WorkloadSpec& workload, double factor);

struct SuperpositionFlags {
  bool prune = false;
  bool cache = false;
  bool parallel = false;
};

/// Everything in one chain: prompt forward, then one decode stage per token.
CostPlan naive_plan(const WorkloadSpec& workload);

/// ForkJoin plan. Every path is evaluated; pruning only shortens the context
/// of the postamble and decode. `kept` overrides the pruned set, which by
/// default is the k longest paths (a worst case for the kept context).
CostPlan superposition_plan(const WorkloadSpec& workload, SuperpositionFlags flags,
                            std::size_t k = 1,
                            std::optional<std::vector<std::size_t>> kept = std::nullopt);

/// Reranker shape: preamble and top document cached, the other k-1 documents,
/// query and postamble computed in one chain.
CostPlan ranking_plan(const WorkloadSpec& workload, std::size_t k);

/// `passes` full-prompt forwards, then decode.
CostPlan attention_sort_plan(const WorkloadSpec& workload, std::size_t passes = 3);

/// Preamble and documents precomputed; query, postamble and decode against the full context.
CostPlan prompt_cache_plan(const WorkloadSpec& workload);

enum class CostMethod { naive, superposition, ranking, attention_sort, prompt_cache };

struct CostVariant {
  std::string name;
  CostMethod method = CostMethod::naive;
  SuperpositionFlags flags;
  std::size_t k = 1;
  double factor = 0.0;  ///< 0 means one document per path
  std::size_t passes = 3;
};

struct CostRow {
  std::string name;
  double cycles = 0.0;
  double speedup = 0.0;
  CostPlan plan;
};

CostPlan plan_for(const WorkloadSpec& workload, const CostVariant& variant);

/// One row per variant; speedup is relative to the first naive variant.
std::vector<CostRow> speedup_report(const WorkloadSpec& workload, const ModelShape& shape,
                                    std::span<const CostVariant> variants);

/// Naive, the eight prune/cache/parallel combinations and the baseline shapes.
std::vector<CostVariant> standard_variants(std::size_t k = 1, double factor = 0.0);

std::string report_csv(std::span<const CostRow> rows, const ModelShape* breakdown_shape = nullptr);
std::string report_table(std::span<const CostRow> rows);

// Built-in presets. Paper-scale parameter counts and dimensions come from
// public model cards and are external constants.
std::vector<ModelShape> builtin_model_presets();
std::vector<WorkloadSpec> builtin_workload_presets();
ModelShape model_preset(std::string_view name);
WorkloadSpec workload_preset(std::string_view name);

/// {"models": [...], "workloads": [...]}
nlohmann::json presets_to_json();
void load_presets_json(const nlohmann::json& doc, std::vector<ModelShape>& models,
                       std::vector<WorkloadSpec>& workloads);

}  // namespace superpose
