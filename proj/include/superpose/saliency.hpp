#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "superpose/graph.hpp"
#include "superpose/lm.hpp"

namespace superpose {

enum class SaliencyMetric { bayesian, attention, none };

std::string_view to_string(SaliencyMetric metric);
SaliencyMetric saliency_metric_from_string(std::string_view name);

enum class BayesianVariant {
  /// -H(phi_i, q) + optional -H(delta_i, d_i), each in mean nats per predicted token.
  query_likelihood,
  /// The printed form: log H(delta_i, d_i) / |d_i| + log H(pi, p) / |p|.
  printed,
};

struct PathScore {
  std::size_t path = 0;
  double query_term = 0.0;
  double prior_term = 0.0;
  double score = 0.0;
  double posterior = 0.0;
};

/// Mean over t = 2..n of -log softmax(logits[t-1])[tokens[t]].
double shifted_cross_entropy(const LogitBlock& logits, std::span<const TokenId> tokens);

/// What one path contributes to its Bayesian score. A null `doc_logits` means
/// no prior is available for that path and its prior term is 0.
struct PathEvidence {
  const LogitBlock* doc_logits = nullptr;
  std::span<const TokenId> doc_tokens;
  const LogitBlock* query_logits = nullptr;
  std::span<const TokenId> query_tokens;
};

struct BayesianOptions {
  bool include_prior = true;
  bool include_query = true;
  BayesianVariant variant = BayesianVariant::query_likelihood;
  /// Only read by the printed variant.
  const LogitBlock* preamble_logits = nullptr;
  std::span<const TokenId> preamble_tokens;
};

std::vector<PathScore> bayesian_path_scores(std::span<const PathEvidence> paths,
                                            const BayesianOptions& options = {});

/// `doc_mass[i]` is the mean attention mass the query of path i places on the
/// keys of document i. Throws SummariesUnavailable when `available` is false.
std::vector<PathScore> attention_path_scores(std::span<const double> doc_mass,
                                             bool available = true);

/// Softmax of the scores into `posterior`, in path-index order.
void assign_posteriors(std::vector<PathScore>& scores);

/// The min(k, n) highest scores, descending; ties go to the lower path index.
std::vector<std::size_t> top_k_paths(std::span<const PathScore> scores, std::size_t k);

/// Paths with posterior >= tau, descending; keeps the best path if none pass.
std::vector<std::size_t> threshold_paths(std::span<const PathScore> scores, double tau);

}  // namespace superpose
