#include <gtest/gtest.h>

#include <set>

#include "superpose/error.hpp"
#include "superpose/graph.hpp"

using namespace superpose;

namespace {

TokenSegment seg(std::size_t n, SegmentKind kind = SegmentKind::document, TokenId base = 1) {
  TokenSegment s;
  s.kind = kind;
  for (std::size_t i = 0; i < n; ++i) s.tokens.push_back(base + static_cast<TokenId>(i));
  return s;
}

ForkJoinGraph fork(std::vector<std::size_t> doc_lengths, std::size_t p = 4, std::size_t q = 3,
                   std::size_t t = 1) {
  std::vector<TokenSegment> docs;
  for (auto n : doc_lengths) docs.push_back(seg(n));
  return build_fork_join(seg(p, SegmentKind::preamble), docs, seg(q, SegmentKind::query),
                         seg(t, SegmentKind::postamble));
}

}  // namespace

TEST(ForkJoin, ThreeDocumentsGiveEightSegmentsAndNineEdges) {
  const auto fj = fork({2, 3, 4});
  EXPECT_EQ(fj.graph.size(), 8u);
  EXPECT_EQ(fj.graph.edges().size(), 9u);
  EXPECT_EQ(fj.layout.path_count(), 3u);
  for (const auto& path : fj.layout.paths) {
    EXPECT_EQ(fj.graph.parents(path.document), std::vector<SegmentId>{fj.layout.preamble});
    EXPECT_EQ(fj.graph.parents(path.query), std::vector<SegmentId>{path.document});
    EXPECT_EQ(fj.graph.segment(path.query).tokens, fj.graph.segment(fj.layout.paths[0].query).tokens);
    EXPECT_EQ(fj.graph.segment(path.query).kind, SegmentKind::query);
  }
  EXPECT_EQ(fj.graph.parents(fj.layout.postamble).size(), 3u);
}

TEST(ForkJoin, QueryCopiesGetFreshIds) {
  const auto fj = fork({2, 2, 2, 2});
  std::set<SegmentId> ids;
  for (const auto& s : fj.graph.segments()) ids.insert(s.id);
  EXPECT_EQ(ids.size(), fj.graph.size());
}

TEST(ForkJoin, SingleDocumentIsAChain) {
  const auto fj = fork({5});
  EXPECT_TRUE(fj.graph.is_chain());
  const std::vector<TokenSegment> chain_segs{seg(4, SegmentKind::preamble), seg(5), seg(3, SegmentKind::query),
                                             seg(1, SegmentKind::postamble)};
  const auto chain = build_chain(chain_segs);
  ASSERT_EQ(chain.size(), fj.graph.size());
  // Same dependency structure: each segment has exactly the previous one as parent.
  const auto order = fj.graph.topological_order();
  for (std::size_t i = 1; i < order.size(); ++i) {
    EXPECT_EQ(fj.graph.parents(order[i]), std::vector<SegmentId>{order[i - 1]});
    EXPECT_EQ(fj.graph.segment(order[i]).size(), chain.segment(static_cast<SegmentId>(i)).size());
  }
}

TEST(ForkJoin, RejectsEmptyInputs) {
  const std::vector<TokenSegment> none;
  try {
    build_fork_join(seg(2, SegmentKind::preamble), none, seg(2), seg(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_document_set);
  }
  const std::vector<TokenSegment> with_empty{seg(2), seg(0)};
  try {
    build_fork_join(seg(2, SegmentKind::preamble), with_empty, seg(2), seg(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_segment);
  }
  const std::vector<TokenSegment> one{seg(2)};
  EXPECT_THROW(build_fork_join(seg(2, SegmentKind::preamble), one, seg(0), seg(1)), Error);
  EXPECT_THROW(build_fork_join(seg(2, SegmentKind::preamble), one, seg(2), seg(0)), Error);
}

TEST(ForkJoin, DetectRecoversLayout) {
  const auto fj = fork({2, 3});
  ForkJoinLayout found;
  ASSERT_TRUE(detect_fork_join(fj.graph, found));
  EXPECT_EQ(found.preamble, fj.layout.preamble);
  EXPECT_EQ(found.postamble, fj.layout.postamble);
  ASSERT_EQ(found.paths.size(), 2u);
  EXPECT_EQ(found.paths[1].document, fj.layout.paths[1].document);
  EXPECT_EQ(found.paths[1].query, fj.layout.paths[1].query);
}

TEST(PromptGraphTest, RejectsCyclesDuplicatesAndUnknownEndpoints) {
  auto a = seg(1), b = seg(1), c = seg(1);
  a.id = 0;
  b.id = 1;
  c.id = 2;
  EXPECT_THROW(PromptGraph({a, b, c}, {{0, 1}, {1, 2}, {2, 1}}), Error);
  EXPECT_THROW(PromptGraph({a, a}, {}), Error);
  EXPECT_THROW(PromptGraph({a, b}, {{0, 7}}), Error);
  EXPECT_THROW(PromptGraph({a, b}, {}), Error);  // two roots
}

TEST(PromptGraphTest, AttendsFollowsReachability) {
  const auto fj = fork({2, 3, 4});
  const auto& g = fj.graph;
  const auto& L = fj.layout;
  EXPECT_TRUE(g.attends(L.paths[0].query, L.paths[0].document));
  EXPECT_TRUE(g.attends(L.paths[0].query, L.preamble));
  EXPECT_FALSE(g.attends(L.paths[0].query, L.paths[1].document));
  EXPECT_FALSE(g.attends(L.paths[0].document, L.paths[1].document));
  EXPECT_TRUE(g.attends(L.postamble, L.paths[2].document));
  EXPECT_FALSE(g.attends(L.preamble, L.postamble));
  // Join ancestors come in path order.
  const auto anc = g.ancestors(L.postamble);
  const std::vector<SegmentId> expected{L.preamble, L.paths[0].document, L.paths[0].query, L.paths[1].document,
                                        L.paths[1].query, L.paths[2].document, L.paths[2].query};
  EXPECT_EQ(anc, expected);
  EXPECT_EQ(g.visible_context_tokens(L.postamble), 4u + 2 + 3 + 4 + 3 * 3);
  EXPECT_EQ(g.visible_context_tokens(L.paths[1].query), 4u + 3);
}

TEST(PromptGraphTest, TopologicalOrderRespectsEdges) {
  const auto fj = fork({1, 2, 3, 4, 5});
  const auto order = fj.graph.topological_order();
  std::vector<std::size_t> rank(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  for (const auto& e : fj.graph.edges()) EXPECT_LT(rank[e.parent], rank[e.child]);
}

TEST(GroupDocuments, ClassicalAndExactDivision) {
  std::vector<TokenSegment> docs;
  for (int i = 0; i < 20; ++i) docs.push_back(seg(2, SegmentKind::document, static_cast<TokenId>(10 * i)));
  EXPECT_EQ(group_documents(docs, 1.0).size(), 1u);
  EXPECT_EQ(group_documents(docs, 1.0)[0].size(), 40u);
  const auto five = group_documents(docs, 5.0);
  ASSERT_EQ(five.size(), 5u);
  for (const auto& g : five) EXPECT_EQ(g.size(), 8u);
  EXPECT_EQ(group_documents(docs, 20.0).size(), 20u);
}

TEST(GroupDocuments, SevenByTwoGivesFourThenThree) {
  std::vector<TokenSegment> docs;
  for (int i = 0; i < 7; ++i) docs.push_back(seg(1, SegmentKind::document, static_cast<TokenId>(i + 1)));
  const auto groups = group_documents(docs, 2.0);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].size(), 4u);
  EXPECT_EQ(groups[1].size(), 3u);
}

TEST(GroupDocuments, RoundsHalfToEven) {
  EXPECT_EQ(documents_per_group(5, 2.0), 2u);   // 2.5 -> 2
  EXPECT_EQ(documents_per_group(7, 2.0), 4u);   // 3.5 -> 4
  EXPECT_EQ(documents_per_group(20, 3.0), 7u);  // 6.67 -> 7
}

TEST(GroupDocuments, PreservesTokenOrder) {
  std::vector<TokenSegment> docs;
  std::vector<TokenId> flat;
  for (int i = 0; i < 9; ++i) {
    docs.push_back(seg(static_cast<std::size_t>(i % 3 + 1), SegmentKind::document, static_cast<TokenId>(i * 7)));
    flat.insert(flat.end(), docs.back().tokens.begin(), docs.back().tokens.end());
  }
  for (double factor : {1.0, 2.0, 2.5, 3.0, 4.0, 9.0}) {
    std::vector<TokenId> joined;
    for (const auto& g : group_documents(docs, factor)) joined.insert(joined.end(), g.tokens.begin(), g.tokens.end());
    EXPECT_EQ(joined, flat) << factor;
  }
}

TEST(GroupDocuments, FactorOutOfRange) {
  std::vector<TokenSegment> docs(3, seg(1));
  for (double bad : {0.5, 3.5, 0.0}) {
    try {
      group_documents(docs, bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::factor_out_of_range);
    }
  }
}

TEST(LongestPath, ChainAndFork) {
  const std::vector<TokenSegment> chain{seg(4), seg(3), seg(2)};
  EXPECT_EQ(longest_path_tokens(build_chain(chain)), 9u);
  EXPECT_EQ(longest_path_tokens(fork({2, 6}, 4, 3, 1).graph), 14u);
}

TEST(LongestPath, NaturalQuestionsScale) {
  std::vector<TokenSegment> docs(20, seg(143));
  const auto fj = build_fork_join(seg(30, SegmentKind::preamble), docs, seg(20, SegmentKind::query),
                                  seg(5, SegmentKind::postamble));
  std::vector<TokenSegment> merged{seg(30), seg(20 * 143), seg(20), seg(5)};
  const auto classical = longest_path_tokens(build_chain(merged));
  const auto superposed = longest_path_tokens(fj.graph);
  EXPECT_EQ(classical, 2915u);
  EXPECT_EQ(superposed, 198u);
  // Same order of magnitude as 2923 -> 206.
  EXPECT_NEAR(static_cast<double>(classical) / 2923.0, 1.0, 0.05);
  EXPECT_NEAR(static_cast<double>(superposed) / 206.0, 1.0, 0.05);
}

TEST(GraphJson, RoundTrip) {
  const auto fj = fork({2, 3});
  const auto doc = to_json(fj.graph);
  const auto back = graph_from_json(doc);
  EXPECT_EQ(back.segments(), fj.graph.segments());
  EXPECT_EQ(back.edges(), fj.graph.edges());
  EXPECT_EQ(doc["edges"][0], nlohmann::json({0, 1}));
  EXPECT_THROW(graph_from_json(nlohmann::json::parse(R"({"segments": 3})")), Error);
}
