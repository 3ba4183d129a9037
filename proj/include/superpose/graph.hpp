#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace superpose {

using TokenId = std::int32_t;
using SegmentId = std::uint32_t;

enum class SegmentKind { preamble, document, query, postamble, response };

std::string_view to_string(SegmentKind kind);
SegmentKind segment_kind_from_string(std::string_view name);

struct TokenSegment {
  SegmentId id = 0;
  std::vector<TokenId> tokens;
  SegmentKind kind = SegmentKind::document;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const TokenSegment&) const = default;
};

struct Edge {
  SegmentId parent = 0;
  SegmentId child = 0;
  bool operator==(const Edge&) const = default;
};

/// Immutable DAG of token segments. An edge parent -> child means the child's
/// tokens attend to the parent's tokens (and, transitively, to every ancestor).
///
/// Construction validates: unique ids, known edge endpoints, acyclicity, a
/// single root, and reachability of every segment from that root.
class PromptGraph {
 public:
  PromptGraph() = default;
  PromptGraph(std::vector<TokenSegment> segments, std::vector<Edge> edges);

  const std::vector<TokenSegment>& segments() const noexcept { return segments_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t size() const noexcept { return segments_.size(); }

  bool contains(SegmentId id) const;
  const TokenSegment& segment(SegmentId id) const;
  SegmentId root() const noexcept { return root_; }

  /// Parents and children in edge insertion order.
  std::vector<SegmentId> parents(SegmentId id) const;
  std::vector<SegmentId> children(SegmentId id) const;

  /// All ancestors of `id`. Multi-parent joins are expanded parent by parent
  /// in edge order (i.e. by path index for ForkJoin), each parent preceded by
  /// its own ancestors; duplicates keep their first occurrence.
  std::vector<SegmentId> ancestors(SegmentId id) const;

  /// True iff `viewer` attends to `target`: a directed path target -> viewer.
  bool attends(SegmentId viewer, SegmentId target) const;

  std::vector<SegmentId> topological_order() const;
  std::vector<SegmentId> leaves() const;

  /// Token ids visible to segment `id` from other segments (ancestor order).
  std::size_t visible_context_tokens(SegmentId id) const;

  bool is_chain() const;

 private:
  std::size_t index_of(SegmentId id) const;

  std::vector<TokenSegment> segments_;
  std::vector<Edge> edges_;
  SegmentId root_ = 0;
};

struct ForkPath {
  SegmentId document = 0;
  SegmentId query = 0;
};

struct ForkJoinLayout {
  SegmentId preamble = 0;
  std::vector<ForkPath> paths;
  SegmentId postamble = 0;

  std::size_t path_count() const noexcept { return paths.size(); }
};

struct ForkJoinGraph {
  PromptGraph graph;
  ForkJoinLayout layout;
};

/// Preamble forks into one (document, query copy) branch per document; every
/// query copy joins into the postamble. Ids are assigned fresh:
/// preamble 0, documents 1..n, queries n+1..2n, postamble 2n+1.
ForkJoinGraph build_fork_join(const TokenSegment& preamble,
                              std::span<const TokenSegment> documents,
                              const TokenSegment& query,
                              const TokenSegment& postamble);

/// Linked list of segments in the given order, ids 0..n-1.
PromptGraph build_chain(std::span<const TokenSegment> segments);

/// Recovers the ForkJoin layout of a graph built by build_fork_join (or any
/// isomorphic graph). Returns false when the topology is not ForkJoin.
bool detect_fork_join(const PromptGraph& graph, ForkJoinLayout& layout);

/// Merges documents into ceil(m / g) groups of g = round_half_even(m / factor)
/// consecutive documents, the last group possibly smaller.
std::vector<TokenSegment> group_documents(std::span<const TokenSegment> documents,
                                          double factor);

/// Number of documents per group for `m` documents at superposition factor `factor`.
std::size_t documents_per_group(std::size_t m, double factor);

/// Maximum over root-to-leaf paths of summed segment lengths.
std::size_t longest_path_tokens(const PromptGraph& graph);

nlohmann::json to_json(const PromptGraph& graph);
PromptGraph graph_from_json(const nlohmann::json& doc);

}  // namespace superpose
