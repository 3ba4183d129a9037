#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "superpose/error.hpp"
#include "superpose/positioning.hpp"

using namespace superpose;

namespace {

TokenSegment seg(std::size_t n, SegmentKind kind = SegmentKind::document) {
  return {0, std::vector<TokenId>(n, 7), kind};
}

ForkJoinGraph fork(const std::vector<std::size_t>& lengths, std::size_t p = 4, std::size_t q = 2) {
  std::vector<TokenSegment> docs;
  for (auto n : lengths) docs.push_back(seg(n));
  return build_fork_join(seg(p, SegmentKind::preamble), docs, seg(q, SegmentKind::query),
                         seg(2, SegmentKind::postamble));
}

}  // namespace

TEST(Arange, Examples) {
  EXPECT_EQ(arange_positions(0, 1, 3), (PositionVector{0, 1, 2}));
  EXPECT_EQ(arange_positions(4, 0.5, 3), (PositionVector{4, 4.5, 5}));
  EXPECT_EQ(arange_positions(4, 1.5, 2), (PositionVector{4, 5.5}));
  for (double bad : {0.0, -1.0}) {
    try {
      arange_positions(0, bad, 2);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::non_positive_step);
    }
  }
}

TEST(HarmonicSpan, Examples) {
  const std::vector<std::size_t> a{2, 3, 6}, b{7}, c{4, 4};
  EXPECT_DOUBLE_EQ(harmonic_span(a), 3.0);
  EXPECT_DOUBLE_EQ(harmonic_span(b), 7.0);
  EXPECT_DOUBLE_EQ(harmonic_span(c), 4.0);
  try {
    harmonic_span({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_list);
  }
}

TEST(Equilibrium, WorkedExample) {
  const auto fj = fork({2, 3, 6});
  const auto pg = assign_equilibrium(fj.graph);
  const auto& L = fj.layout;
  EXPECT_EQ(pg.positions(L.preamble), (PositionVector{0, 1, 2, 3}));
  EXPECT_EQ(pg.positions(L.paths[0].document), (PositionVector{4, 5.5}));
  EXPECT_EQ(pg.positions(L.paths[1].document), (PositionVector{4, 5, 6}));
  EXPECT_EQ(pg.positions(L.paths[2].document), (PositionVector{4, 4.5, 5, 5.5, 6, 6.5}));
  for (const auto& p : L.paths) EXPECT_EQ(pg.positions(p.query), (PositionVector{7.5, 8.5}));
  EXPECT_EQ(pg.positions(L.postamble), (PositionVector{9.5, 10.5}));
}

TEST(Equilibrium, EqualLengthsUseUnitSteps) {
  const auto fj = fork({5, 5, 5});
  const auto pg = assign_equilibrium(fj.graph);
  for (const auto& p : fj.layout.paths) EXPECT_EQ(pg.positions(p.document), arange_positions(4, 1, 5));
}

TEST(Equilibrium, SingleDocumentMatchesChain) {
  const auto fj = fork({6});
  const auto eq = assign_equilibrium(fj.graph);
  const auto la = assign_left_aligned(fj.graph);
  double next = 0;
  for (auto id : fj.graph.topological_order()) {
    EXPECT_EQ(eq.positions(id), arange_positions(next, 1, fj.graph.segment(id).size()));
    EXPECT_EQ(eq.positions(id), la.positions(id));
    next += static_cast<double>(fj.graph.segment(id).size());
  }
}

TEST(Equilibrium, EndPositionsClusterWithinOneStep) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> lengths(fixtures::between(rng, 1, 8));
    for (auto& n : lengths) n = fixtures::between(rng, 1, 40);
    const auto fj = fork(lengths);
    const auto pg = assign_equilibrium(fj.graph);
    const double S = harmonic_span(lengths);
    double max_step = 0.0;
    for (auto n : lengths) max_step = std::max(max_step, S / static_cast<double>(n));
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const double end = pg.positions(fj.layout.paths[i].document).back();
      EXPECT_LT(std::abs(end - (3.0 + S)), max_step + 1e-9);
    }
    // Gap bound per path: S (1 - 1/len) + 1.
    EXPECT_LT(position_gap_stats(pg), S + 1.0);
  }
}

TEST(LeftAligned, WorkedExample) {
  const auto fj = fork({2, 6});
  const auto pg = assign_left_aligned(fj.graph);
  EXPECT_EQ(pg.positions(fj.layout.paths[0].document), (PositionVector{4, 5}));
  EXPECT_EQ(pg.positions(fj.layout.paths[1].document), arange_positions(4, 1, 6));
  EXPECT_EQ(pg.positions(fj.layout.paths[0].query).front(), 10.0);
  EXPECT_DOUBLE_EQ(position_gap_stats(pg), 2.0);
  EXPECT_DOUBLE_EQ(position_gap_stats(assign_left_aligned(fork({3, 3, 3}).graph)), 0.0);
}

TEST(Positioning, EdgeOrderAndSharedQueryVectors) {
  std::mt19937_64 rng(5);
  for (auto strategy : {PositioningStrategy::equilibrium, PositioningStrategy::left_aligned}) {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::size_t> lengths(fixtures::between(rng, 1, 6));
      for (auto& n : lengths) n = fixtures::between(rng, 1, 30);
      const auto fj = fork(lengths, fixtures::between(rng, 1, 9), fixtures::between(rng, 1, 5));
      const auto pg = assign_positions(fj.graph, strategy);
      for (const auto& e : fj.graph.edges()) {
        EXPECT_LT(pg.positions(e.parent).back(), pg.positions(e.child).front());
      }
      for (const auto& s : fj.graph.segments()) {
        const auto& v = pg.positions(s.id);
        ASSERT_EQ(v.size(), s.size());
        for (std::size_t i = 1; i < v.size(); ++i) EXPECT_LT(v[i - 1], v[i]);
      }
      for (const auto& p : fj.layout.paths) {
        EXPECT_EQ(pg.positions(p.query), pg.positions(fj.layout.paths[0].query));
      }
    }
  }
}

TEST(Positioning, ChainsAgreeAcrossStrategies) {
  const std::vector<TokenSegment> segs{seg(3), seg(5), seg(2)};
  const auto chain = build_chain(segs);
  const auto a = assign_equilibrium(chain);
  const auto b = assign_left_aligned(chain);
  for (const auto& s : chain.segments()) EXPECT_EQ(a.positions(s.id), b.positions(s.id));
  EXPECT_EQ(a.positions(2), (PositionVector{8, 9}));
}

TEST(Positioning, RejectsOtherTopologies) {
  auto a = seg(1), b = seg(1), c = seg(1), d = seg(1);
  a.id = 0;
  b.id = 1;
  c.id = 2;
  d.id = 3;
  // Diamond whose branches continue past the join: not ForkJoin, not a chain.
  const PromptGraph g({a, b, c, d}, {{0, 1}, {0, 2}, {1, 3}});
  try {
    assign_equilibrium(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_graph);
  }
}

TEST(Positioning, NaturalQuestionsGapStatistic) {
  // 20 documents per example with lengths drawn to match mean 142.6 and a
  // mean longest document of about 170.
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> len(142.6, 14.8);
  double total = 0.0;
  const int examples = 400;
  for (int e = 0; e < examples; ++e) {
    std::vector<std::size_t> lengths(20);
    for (auto& n : lengths) n = static_cast<std::size_t>(std::max(1.0, std::round(len(rng))));
    total += position_gap_stats(assign_left_aligned(fork(lengths, 45, 13).graph));
  }
  EXPECT_NEAR(total / examples, 27.6, 3.0);
}

TEST(Positioning, StrategyNames) {
  EXPECT_EQ(positioning_from_string("left_aligned"), PositioningStrategy::left_aligned);
  EXPECT_EQ(positioning_from_string("equilibrium"), PositioningStrategy::equilibrium);
  EXPECT_THROW(positioning_from_string("right"), Error);
}
