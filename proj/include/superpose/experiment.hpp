#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "superpose/cache_store.hpp"
#include "superpose/dataset.hpp"
#include "superpose/orchestrator.hpp"

namespace superpose {

struct ExperimentConfig {
  ServingPlan plan;
  PromptTemplate prompt = default_template();
  std::uint64_t seed = 0;
  std::string backend;  ///< echoed into the report only
};

struct ExampleRow {
  std::size_t index = 0;
  std::size_t paths = 0;
  std::optional<std::string> response;
  std::optional<int> subspan;
  std::optional<int> em;
  std::optional<double> f1;
  std::vector<std::size_t> selected;
  std::optional<double> cycles;
  std::optional<double> naive_cycles;
  std::size_t path_evaluations = 0;
  std::optional<std::string> error;
};

struct EvalReport {
  std::string label;
  nlohmann::json config;
  std::vector<ExampleRow> rows;
  std::size_t count = 0;     ///< examples that produced a response
  std::size_t failures = 0;  ///< examples recorded as null
  double mean_subspan = 0.0;
  double mean_em = 0.0;
  double mean_f1 = 0.0;
  double mean_cycles = 0.0;
  double mean_speedup = 0.0;
};

/// Serves every example in order and scores the decoded text. A failing
/// example becomes a row with nulls and an error message.
EvalReport run_experiment(std::span<const RagExample> examples, const ExperimentConfig& config,
                          Backend& backend, CacheStore* store = nullptr);

struct SweepGrid {
  std::vector<std::size_t> top_k;
  std::vector<double> factors;
};

/// One report per (k, factor) pair; an empty axis keeps the configured value.
std::vector<EvalReport> run_sweep(std::span<const RagExample> examples, const ExperimentConfig& config,
                                  const SweepGrid& grid, Backend& backend, CacheStore* store = nullptr);

nlohmann::json to_json(const EvalReport& report);
/// One line per example: label, index, paths, metrics, cycles, error.
std::string reports_csv(std::span<const EvalReport> reports);

}  // namespace superpose
