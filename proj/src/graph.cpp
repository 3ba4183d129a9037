#include "superpose/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "superpose/error.hpp"

namespace superpose {

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::preamble: return "preamble";
    case SegmentKind::document: return "document";
    case SegmentKind::query: return "query";
    case SegmentKind::postamble: return "postamble";
    case SegmentKind::response: return "response";
  }
  return "document";
}

SegmentKind segment_kind_from_string(std::string_view name) {
  for (auto kind : {SegmentKind::preamble, SegmentKind::document, SegmentKind::query,
                    SegmentKind::postamble, SegmentKind::response}) {
    if (to_string(kind) == name) return kind;
  }
  throw Error(ErrorCode::invalid_argument, "unknown segment kind '" + std::string(name) + "'");
}

PromptGraph::PromptGraph(std::vector<TokenSegment> segments, std::vector<Edge> edges)
    : segments_(std::move(segments)), edges_(std::move(edges)) {
  if (segments_.empty()) throw Error(ErrorCode::invalid_graph, "graph has no segments");

  std::unordered_set<SegmentId> ids;
  for (const auto& s : segments_) {
    if (!ids.insert(s.id).second) {
      throw Error(ErrorCode::invalid_graph, "duplicate segment id " + std::to_string(s.id));
    }
    const bool needs_tokens = s.kind == SegmentKind::preamble ||
                              s.kind == SegmentKind::document || s.kind == SegmentKind::query;
    if (needs_tokens && s.tokens.empty()) {
      throw Error(ErrorCode::empty_segment, "segment " + std::to_string(s.id) + " has no tokens");
    }
    for (TokenId t : s.tokens) {
      if (t < 0) throw Error(ErrorCode::invalid_graph, "negative token id");
    }
  }

  std::unordered_map<SegmentId, int> indegree;
  for (const auto& e : edges_) {
    if (!ids.contains(e.parent) || !ids.contains(e.child)) {
      throw Error(ErrorCode::invalid_graph, "edge references unknown segment");
    }
    ++indegree[e.child];
  }

  std::vector<SegmentId> roots;
  for (const auto& s : segments_) {
    if (indegree[s.id] == 0) roots.push_back(s.id);
  }
  if (roots.size() != 1) {
    throw Error(ErrorCode::invalid_graph,
                "graph must have exactly one root, found " + std::to_string(roots.size()));
  }
  root_ = roots.front();

  // Kahn's algorithm doubles as the cycle check; with a unique root every
  // segment it visits is reachable from that root.
  if (topological_order().size() != segments_.size()) {
    throw Error(ErrorCode::invalid_graph, "graph has a cycle or unreachable segments");
  }
}

std::size_t PromptGraph::index_of(SegmentId id) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].id == id) return i;
  }
  throw Error(ErrorCode::invalid_argument, "unknown segment id " + std::to_string(id));
}

bool PromptGraph::contains(SegmentId id) const {
  return std::any_of(segments_.begin(), segments_.end(),
                     [id](const TokenSegment& s) { return s.id == id; });
}

const TokenSegment& PromptGraph::segment(SegmentId id) const { return segments_[index_of(id)]; }

std::vector<SegmentId> PromptGraph::parents(SegmentId id) const {
  std::vector<SegmentId> out;
  for (const auto& e : edges_) {
    if (e.child == id) out.push_back(e.parent);
  }
  return out;
}

std::vector<SegmentId> PromptGraph::children(SegmentId id) const {
  std::vector<SegmentId> out;
  for (const auto& e : edges_) {
    if (e.parent == id) out.push_back(e.child);
  }
  return out;
}

std::vector<SegmentId> PromptGraph::ancestors(SegmentId id) const {
  std::vector<SegmentId> out;
  std::unordered_set<SegmentId> seen;
  // Post-order expansion: a parent's ancestors precede the parent itself.
  auto visit = [&](auto&& self, SegmentId node) -> void {
    for (SegmentId p : parents(node)) {
      if (seen.contains(p)) continue;
      self(self, p);
      if (seen.insert(p).second) out.push_back(p);
    }
  };
  visit(visit, id);
  return out;
}

bool PromptGraph::attends(SegmentId viewer, SegmentId target) const {
  if (viewer == target) return false;
  const auto anc = ancestors(viewer);
  return std::find(anc.begin(), anc.end(), target) != anc.end();
}

std::vector<SegmentId> PromptGraph::topological_order() const {
  std::unordered_map<SegmentId, int> indegree;
  for (const auto& s : segments_) indegree[s.id] = 0;
  for (const auto& e : edges_) ++indegree[e.child];

  std::vector<SegmentId> ready;
  for (const auto& s : segments_) {
    if (indegree[s.id] == 0) ready.push_back(s.id);
  }
  std::vector<SegmentId> order;
  std::size_t head = 0;
  while (head < ready.size()) {
    SegmentId node = ready[head++];
    order.push_back(node);
    for (const auto& e : edges_) {
      if (e.parent == node && --indegree[e.child] == 0) ready.push_back(e.child);
    }
  }
  return order;
}

std::vector<SegmentId> PromptGraph::leaves() const {
  std::vector<SegmentId> out;
  for (const auto& s : segments_) {
    if (children(s.id).empty()) out.push_back(s.id);
  }
  return out;
}

std::size_t PromptGraph::visible_context_tokens(SegmentId id) const {
  std::size_t total = 0;
  for (SegmentId a : ancestors(id)) total += segment(a).size();
  return total;
}

bool PromptGraph::is_chain() const {
  if (edges_.size() + 1 != segments_.size()) return false;
  for (const auto& s : segments_) {
    if (parents(s.id).size() > 1 || children(s.id).size() > 1) return false;
  }
  return true;
}

ForkJoinGraph build_fork_join(const TokenSegment& preamble,
                              std::span<const TokenSegment> documents,
                              const TokenSegment& query,
                              const TokenSegment& postamble) {
  if (documents.empty()) throw Error(ErrorCode::empty_document_set, "no documents supplied");
  auto require_tokens = [](const TokenSegment& s, std::string_view what) {
    if (s.tokens.empty()) {
      throw Error(ErrorCode::empty_segment, std::string(what) + " segment has no tokens");
    }
  };
  require_tokens(preamble, "preamble");
  require_tokens(query, "query");
  require_tokens(postamble, "postamble");
  for (const auto& d : documents) require_tokens(d, "document");

  const auto n = static_cast<SegmentId>(documents.size());
  std::vector<TokenSegment> segments;
  std::vector<Edge> edges;
  ForkJoinLayout layout;
  layout.preamble = 0;
  layout.postamble = 2 * n + 1;

  segments.push_back({0, preamble.tokens, SegmentKind::preamble});
  for (SegmentId i = 0; i < n; ++i) {
    segments.push_back({1 + i, documents[i].tokens, SegmentKind::document});
  }
  for (SegmentId i = 0; i < n; ++i) {
    segments.push_back({1 + n + i, query.tokens, SegmentKind::query});
  }
  segments.push_back({layout.postamble, postamble.tokens, SegmentKind::postamble});

  for (SegmentId i = 0; i < n; ++i) edges.push_back({0, 1 + i});
  for (SegmentId i = 0; i < n; ++i) edges.push_back({1 + i, 1 + n + i});
  for (SegmentId i = 0; i < n; ++i) edges.push_back({1 + n + i, layout.postamble});
  for (SegmentId i = 0; i < n; ++i) layout.paths.push_back({1 + i, 1 + n + i});

  return {PromptGraph(std::move(segments), std::move(edges)), std::move(layout)};
}

PromptGraph build_chain(std::span<const TokenSegment> segments) {
  std::vector<TokenSegment> out;
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    TokenSegment s = segments[i];
    s.id = static_cast<SegmentId>(i);
    out.push_back(std::move(s));
    if (i > 0) edges.push_back({static_cast<SegmentId>(i - 1), static_cast<SegmentId>(i)});
  }
  return PromptGraph(std::move(out), std::move(edges));
}

bool detect_fork_join(const PromptGraph& graph, ForkJoinLayout& layout) {
  ForkJoinLayout found;
  found.preamble = graph.root();
  const auto docs = graph.children(found.preamble);
  if (docs.empty()) return false;
  bool have_join = false;
  for (SegmentId d : docs) {
    if (graph.parents(d).size() != 1) return false;
    const auto qs = graph.children(d);
    if (qs.size() != 1 || graph.parents(qs[0]).size() != 1) return false;
    const auto joins = graph.children(qs[0]);
    if (joins.size() != 1) return false;
    if (!have_join) {
      found.postamble = joins[0];
      have_join = true;
    } else if (joins[0] != found.postamble) {
      return false;
    }
    found.paths.push_back({d, qs[0]});
  }
  if (!graph.children(found.postamble).empty()) return false;
  if (graph.parents(found.postamble).size() != docs.size()) return false;
  if (graph.size() != 2 * docs.size() + 2) return false;
  layout = std::move(found);
  return true;
}

std::size_t documents_per_group(std::size_t m, double factor) {
  if (m == 0) throw Error(ErrorCode::empty_document_set, "no documents to group");
  if (!(factor >= 1.0) || factor > static_cast<double>(m)) {
    throw Error(ErrorCode::factor_out_of_range,
                "superposition factor " + std::to_string(factor) + " outside [1, " +
                    std::to_string(m) + "]");
  }
  // nearbyint honours the default FE_TONEAREST mode: ties go to even.
  const double g = std::nearbyint(static_cast<double>(m) / factor);
  return std::max<std::size_t>(1, static_cast<std::size_t>(g));
}

std::vector<TokenSegment> group_documents(std::span<const TokenSegment> documents,
                                          double factor) {
  const std::size_t m = documents.size();
  const std::size_t g = documents_per_group(m, factor);
  std::vector<TokenSegment> groups;
  for (std::size_t start = 0; start < m; start += g) {
    TokenSegment merged;
    merged.id = static_cast<SegmentId>(groups.size());
    merged.kind = SegmentKind::document;
    for (std::size_t i = start; i < std::min(m, start + g); ++i) {
      merged.tokens.insert(merged.tokens.end(), documents[i].tokens.begin(),
                           documents[i].tokens.end());
    }
    groups.push_back(std::move(merged));
  }
  return groups;
}

std::size_t longest_path_tokens(const PromptGraph& graph) {
  std::unordered_map<SegmentId, std::size_t> best;
  std::size_t result = 0;
  for (SegmentId id : graph.topological_order()) {
    std::size_t incoming = 0;
    for (SegmentId p : graph.parents(id)) incoming = std::max(incoming, best[p]);
    best[id] = incoming + graph.segment(id).size();
    result = std::max(result, best[id]);
  }
  return result;
}

nlohmann::json to_json(const PromptGraph& graph) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : graph.segments()) {
    segments.push_back({{"id", s.id}, {"kind", to_string(s.kind)}, {"tokens", s.tokens}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : graph.edges()) edges.push_back({e.parent, e.child});
  return {{"segments", std::move(segments)}, {"edges", std::move(edges)}};
}

PromptGraph graph_from_json(const nlohmann::json& doc) {
  try {
    std::vector<TokenSegment> segments;
    for (const auto& s : doc.at("segments")) {
      segments.push_back({s.at("id").get<SegmentId>(), s.at("tokens").get<std::vector<TokenId>>(),
                          segment_kind_from_string(s.at("kind").get<std::string>())});
    }
    std::vector<Edge> edges;
    for (const auto& e : doc.at("edges")) {
      edges.push_back({e.at(0).get<SegmentId>(), e.at(1).get<SegmentId>()});
    }
    return PromptGraph(std::move(segments), std::move(edges));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("graph json: ") + e.what());
  }
}

}  // namespace superpose
