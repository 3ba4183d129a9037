#include "superpose/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace superpose {

std::string_view to_string(SaliencyMetric metric) {
  switch (metric) {
    case SaliencyMetric::bayesian: return "bayesian";
    case SaliencyMetric::attention: return "attention";
    case SaliencyMetric::none: return "none";
  }
  return "none";
}

SaliencyMetric saliency_metric_from_string(std::string_view name) {
  if (name == "bayesian") return SaliencyMetric::bayesian;
  if (name == "attention") return SaliencyMetric::attention;
  if (name == "none") return SaliencyMetric::none;
  throw Error(ErrorCode::invalid_argument, "unknown saliency metric '" + std::string(name) + "'");
}

double shifted_cross_entropy(const LogitBlock& logits, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) {
    throw Error(ErrorCode::segment_too_short, "shifted cross-entropy needs at least 2 tokens");
  }
  if (logits.rows() != tokens.size()) {
    throw Error(ErrorCode::dimension_mismatch, "logit rows do not match token count");
  }
  double total = 0.0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const auto row = logits.row(t - 1);
    const auto target = static_cast<std::size_t>(tokens[t]);
    if (target >= row.size()) throw Error(ErrorCode::vocab_overflow, "target token outside vocab");
    double hi = -std::numeric_limits<double>::infinity();
    for (float v : row) hi = std::max(hi, static_cast<double>(v));
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - hi);
    total += hi + std::log(z) - static_cast<double>(row[target]);
  }
  return total / static_cast<double>(tokens.size() - 1);
}

std::vector<PathScore> bayesian_path_scores(std::span<const PathEvidence> paths,
                                            const BayesianOptions& options) {
  std::vector<PathScore> out(paths.size());
  double preamble_term = 0.0;
  if (options.variant == BayesianVariant::printed) {
    if (options.preamble_logits == nullptr) {
      throw Error(ErrorCode::invalid_argument, "printed variant needs preamble logits");
    }
    preamble_term = std::log(shifted_cross_entropy(*options.preamble_logits, options.preamble_tokens)) /
                    static_cast<double>(options.preamble_tokens.size());
  }
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto& ev = paths[i];
    auto& s = out[i];
    s.path = i;
    if (options.variant == BayesianVariant::printed) {
      if (ev.doc_logits != nullptr) {
        s.prior_term = std::log(shifted_cross_entropy(*ev.doc_logits, ev.doc_tokens)) /
                       static_cast<double>(ev.doc_tokens.size());
      }
      s.score = s.prior_term + preamble_term;
      continue;
    }
    if (options.include_query) {
      if (ev.query_logits == nullptr) throw Error(ErrorCode::invalid_argument, "missing query logits");
      s.query_term = -shifted_cross_entropy(*ev.query_logits, ev.query_tokens);
    }
    if (options.include_prior && ev.doc_logits != nullptr) {
      s.prior_term = -shifted_cross_entropy(*ev.doc_logits, ev.doc_tokens);
    }
    s.score = s.query_term + s.prior_term;
  }
  assign_posteriors(out);
  return out;
}

std::vector<PathScore> attention_path_scores(std::span<const double> doc_mass, bool available) {
  if (!available) throw Error(ErrorCode::summaries_unavailable, "backend gave no attention summaries");
  std::vector<PathScore> out(doc_mass.size());
  for (std::size_t i = 0; i < doc_mass.size(); ++i) {
    out[i].path = i;
    out[i].score = doc_mass[i];
  }
  assign_posteriors(out);
  return out;
}

void assign_posteriors(std::vector<PathScore>& scores) {
  if (scores.empty()) return;
  std::sort(scores.begin(), scores.end(),
            [](const PathScore& a, const PathScore& b) { return a.path < b.path; });
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : scores) hi = std::max(hi, s.score);
  double z = 0.0;
  for (auto& s : scores) {
    s.posterior = std::exp(s.score - hi);
    z += s.posterior;
  }
  for (auto& s : scores) s.posterior /= z;
}

namespace {

std::vector<std::size_t> ranked(std::span<const PathScore> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].score != scores[b].score) return scores[a].score > scores[b].score;
    return scores[a].path < scores[b].path;
  });
  return order;
}

}  // namespace

std::vector<std::size_t> top_k_paths(std::span<const PathScore> scores, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
  std::vector<std::size_t> out;
  for (std::size_t i : ranked(scores)) {
    if (out.size() == k) break;
    out.push_back(scores[i].path);
  }
  return out;
}

std::vector<std::size_t> threshold_paths(std::span<const PathScore> scores, double tau) {
  std::vector<std::size_t> out;
  const auto order = ranked(scores);
  for (std::size_t i : order) {
    if (scores[i].posterior >= tau) out.push_back(scores[i].path);
  }
  if (out.empty() && !order.empty()) out.push_back(scores[order.front()].path);
  return out;
}

}  // namespace superpose
