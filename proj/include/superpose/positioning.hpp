#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "superpose/graph.hpp"

namespace superpose {

/// Real-valued token positions, one per token, in units of token slots.
using PositionVector = std::vector<double>;

enum class PositioningStrategy { equilibrium, left_aligned };

std::string_view to_string(PositioningStrategy strategy);
PositioningStrategy positioning_from_string(std::string_view name);

/// <start, start + step, ..., start + (count - 1) * step>
PositionVector arange_positions(double start, double step, std::size_t count);

/// Harmonic mean of the lengths: n / sum(1 / len_i).
double harmonic_span(std::span<const std::size_t> lengths);

struct ForkPositions {
  std::vector<PositionVector> documents;
  /// First position shared by every query copy; strictly after every document token.
  double query_start = 0.0;
};

/// Positions for a set of parallel documents that all start at `start`.
/// Equilibrium spaces document i with step S / len_i so every branch spans S;
/// left-aligned uses unit steps and leaves shorter branches short.
ForkPositions position_fork(double start, std::span<const std::size_t> lengths,
                            PositioningStrategy strategy);

class PositionedGraph {
 public:
  PositionedGraph(PromptGraph graph, std::map<SegmentId, PositionVector> positions);

  const PromptGraph& graph() const noexcept { return graph_; }
  const PositionVector& positions(SegmentId id) const;

 private:
  PromptGraph graph_;
  std::map<SegmentId, PositionVector> positions_;
};

PositionedGraph assign_equilibrium(const PromptGraph& graph);
PositionedGraph assign_left_aligned(const PromptGraph& graph);
PositionedGraph assign_positions(const PromptGraph& graph, PositioningStrategy strategy);

/// Mean over paths of (latest document end - this document's end).
double position_gap_stats(const PositionedGraph& positioned);

}  // namespace superpose
