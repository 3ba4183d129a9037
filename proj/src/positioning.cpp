#include "superpose/positioning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "superpose/error.hpp"

namespace superpose {

std::string_view to_string(PositioningStrategy strategy) {
  return strategy == PositioningStrategy::equilibrium ? "equilibrium" : "left_aligned";
}

PositioningStrategy positioning_from_string(std::string_view name) {
  if (name == "equilibrium") return PositioningStrategy::equilibrium;
  if (name == "left_aligned" || name == "left-aligned") return PositioningStrategy::left_aligned;
  throw Error(ErrorCode::invalid_argument, "unknown positioning '" + std::string(name) + "'");
}

PositionVector arange_positions(double start, double step, std::size_t count) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw Error(ErrorCode::non_positive_step, "step must be positive, got " + std::to_string(step));
  }
  PositionVector out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = start + static_cast<double>(i) * step;
  return out;
}

namespace {

// Sum of 1/len as an exact fraction num/den, when it fits in 64 bits.
struct InverseSum {
  std::uint64_t num = 0, den = 1;
  bool exact = true;
};

InverseSum inverse_sum(std::span<const std::size_t> lengths) {
  InverseSum out;
  for (std::size_t len : lengths) {
    if (len == 0) throw Error(ErrorCode::invalid_argument, "zero-length document");
    if (!out.exact) continue;
    const unsigned __int128 num = (unsigned __int128)out.num * len + out.den;
    const unsigned __int128 den = (unsigned __int128)out.den * len;
    const unsigned __int128 g = std::gcd(num, den);
    if (num / g > UINT64_MAX || den / g > UINT64_MAX) {
      out.exact = false;
      continue;
    }
    out.num = static_cast<std::uint64_t>(num / g);
    out.den = static_cast<std::uint64_t>(den / g);
  }
  return out;
}

// m / (len * sum 1/len), rounded once when the fraction is exact.
double step_for(std::span<const std::size_t> lengths, const InverseSum& sum, std::size_t len) {
  const double m = static_cast<double>(lengths.size());
  if (sum.exact) {
    const unsigned __int128 top = (unsigned __int128)lengths.size() * sum.den;
    const unsigned __int128 bottom = (unsigned __int128)sum.num * len;
    const unsigned __int128 g = std::gcd(top, bottom);
    return static_cast<double>(top / g) / static_cast<double>(bottom / g);
  }
  double ratio_sum = 0.0;
  for (std::size_t other : lengths) ratio_sum += static_cast<double>(len) / static_cast<double>(other);
  return m / ratio_sum;
}

}  // namespace

double harmonic_span(std::span<const std::size_t> lengths) {
  if (lengths.empty()) throw Error(ErrorCode::empty_list, "harmonic span of no lengths");
  const auto sum = inverse_sum(lengths);
  return step_for(lengths, sum, 1);
}

ForkPositions position_fork(double start, std::span<const std::size_t> lengths,
                            PositioningStrategy strategy) {
  if (lengths.empty()) throw Error(ErrorCode::empty_list, "fork with no documents");
  ForkPositions out;
  const bool eq = strategy == PositioningStrategy::equilibrium;
  const auto sum = eq ? inverse_sum(lengths) : InverseSum{};
  double last = start - 1.0;
  for (std::size_t len : lengths) {
    const double step = eq ? step_for(lengths, sum, len) : 1.0;
    out.documents.push_back(arange_positions(start, step, len));
    last = std::max(last, out.documents.back().back());
  }
  out.query_start = last + 1.0;
  return out;
}

PositionedGraph::PositionedGraph(PromptGraph graph, std::map<SegmentId, PositionVector> positions)
    : graph_(std::move(graph)), positions_(std::move(positions)) {
  for (const auto& s : graph_.segments()) {
    auto it = positions_.find(s.id);
    if (it == positions_.end() || it->second.size() != s.size()) {
      throw Error(ErrorCode::invalid_argument,
                  "missing or mis-sized positions for segment " + std::to_string(s.id));
    }
  }
}

const PositionVector& PositionedGraph::positions(SegmentId id) const {
  auto it = positions_.find(id);
  if (it == positions_.end()) {
    throw Error(ErrorCode::invalid_argument, "no positions for segment " + std::to_string(id));
  }
  return it->second;
}

namespace {

double last_or(const PositionVector& v, double fallback) { return v.empty() ? fallback : v.back(); }

PositionedGraph assign_chain(const PromptGraph& graph) {
  std::map<SegmentId, PositionVector> positions;
  double next = 0.0;
  for (SegmentId id : graph.topological_order()) {
    const std::size_t n = graph.segment(id).size();
    positions[id] = arange_positions(next, 1.0, n);
    next += static_cast<double>(n);
  }
  return PositionedGraph(graph, std::move(positions));
}

}  // namespace

PositionedGraph assign_positions(const PromptGraph& graph, PositioningStrategy strategy) {
  if (graph.is_chain()) return assign_chain(graph);

  ForkJoinLayout layout;
  if (!detect_fork_join(graph, layout)) {
    throw Error(ErrorCode::invalid_graph, "positioning supports chain and ForkJoin graphs only");
  }
  std::map<SegmentId, PositionVector> positions;
  const auto& preamble = graph.segment(layout.preamble);
  positions[layout.preamble] = arange_positions(0.0, 1.0, preamble.size());

  std::vector<std::size_t> lengths;
  for (const auto& path : layout.paths) lengths.push_back(graph.segment(path.document).size());
  const auto fork = position_fork(last_or(positions[layout.preamble], -1.0) + 1.0, lengths, strategy);

  // Query copies share one position vector so pruned caches concatenate coherently.
  const std::size_t query_len = graph.segment(layout.paths.front().query).size();
  const PositionVector query_positions = arange_positions(fork.query_start, 1.0, query_len);
  for (std::size_t i = 0; i < layout.paths.size(); ++i) {
    positions[layout.paths[i].document] = fork.documents[i];
    positions[layout.paths[i].query] = query_positions;
  }
  positions[layout.postamble] =
      arange_positions(last_or(query_positions, fork.query_start - 1.0) + 1.0, 1.0,
                       graph.segment(layout.postamble).size());
  return PositionedGraph(graph, std::move(positions));
}

PositionedGraph assign_equilibrium(const PromptGraph& graph) {
  return assign_positions(graph, PositioningStrategy::equilibrium);
}

PositionedGraph assign_left_aligned(const PromptGraph& graph) {
  return assign_positions(graph, PositioningStrategy::left_aligned);
}

double position_gap_stats(const PositionedGraph& positioned) {
  ForkJoinLayout layout;
  if (!detect_fork_join(positioned.graph(), layout)) {
    throw Error(ErrorCode::invalid_graph, "gap statistics need a ForkJoin graph");
  }
  std::vector<double> ends;
  for (const auto& path : layout.paths) ends.push_back(positioned.positions(path.document).back());
  const double latest = *std::max_element(ends.begin(), ends.end());
  double total = 0.0;
  for (double e : ends) total += latest - e;
  return total / static_cast<double>(ends.size());
}

}  // namespace superpose
