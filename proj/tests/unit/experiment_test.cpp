#include <gtest/gtest.h>

#include <numeric>

#include "superpose/experiment.hpp"
#include "superpose/reference_model.hpp"

using namespace superpose;

namespace {

std::vector<RagExample> toy_examples() {
  return {
      {"capital of France?", {"Paris"}, {{"France", "Paris is the capital.", true}, {"Spain", "Madrid.", false}, {"Cats", "Cats purr.", false}}},
      {"tallest animal?", {"giraffe"}, {{"Zoo", "Giraffes are tall.", true}, {"Sea", "Whales swim.", false}}},
      {"boiling point?", {"100 C", "212 F"}, {{"Water", "Water boils at 100 C.", true}, {"Ice", "Ice melts.", false}, {"Steam", "Steam rises.", false}, {"Salt", "Salt is salty.", false}}},
  };
}

ExperimentConfig toy_config() {
  ExperimentConfig c;
  c.plan.max_new_tokens = 4;
  c.prompt = {"Answer briefly.\n", "[{title}] {text}\n", "Q: {question}\n", "A:"};
  c.backend = "reference-alibi";
  return c;
}

}  // namespace

TEST(Experiment, ThreeRowsDeterministic) {
  const auto examples = toy_examples();
  ReferenceBackend a, b;
  const auto first = run_experiment(examples, toy_config(), a);
  const auto second = run_experiment(examples, toy_config(), b);
  ASSERT_EQ(first.rows.size(), 3u);
  EXPECT_EQ(first.count, 3u);
  EXPECT_EQ(first.failures, 0u);
  const auto dump = [](const EvalReport& r) {
    return to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  };
  EXPECT_EQ(dump(first), dump(second));
  EXPECT_EQ(reports_csv(std::vector{first}), reports_csv(std::vector{second}));
}

TEST(Experiment, AggregatesAreMeansOfRows) {
  const auto examples = toy_examples();
  ReferenceBackend backend;
  const auto report = run_experiment(examples, toy_config(), backend);
  double f1 = 0.0, cycles = 0.0, speedup = 0.0, span = 0.0;
  for (const auto& r : report.rows) {
    f1 += *r.f1;
    span += *r.subspan;
    cycles += *r.cycles;
    speedup += *r.naive_cycles / *r.cycles;
    EXPECT_EQ(r.selected.size(), 1u);
    EXPECT_EQ(r.path_evaluations, r.paths);
  }
  EXPECT_NEAR(report.mean_f1, f1 / 3, 1e-12);
  EXPECT_NEAR(report.mean_subspan, span / 3, 1e-12);
  EXPECT_NEAR(report.mean_cycles, cycles / 3, 1e-12 * cycles);
  EXPECT_NEAR(report.mean_speedup, speedup / 3, 1e-12 * speedup);
  EXPECT_GT(report.mean_speedup, 1.0);
}

TEST(Experiment, FailuresBecomeNullRows) {
  const auto examples = toy_examples();
  ReferenceBackend backend;
  auto config = toy_config();
  config.plan.iterations = 2;
  config.plan.top_k = 2;  // needs 4 documents; only the third example has them
  const auto report = run_experiment(examples, config, backend);
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.failures, 2u);
  EXPECT_EQ(report.count, 1u);
  EXPECT_TRUE(report.rows[0].error.has_value());
  EXPECT_FALSE(report.rows[0].f1.has_value());
  EXPECT_FALSE(report.rows[2].error.has_value());
  EXPECT_EQ(report.rows[2].selected.size(), 4u);
  EXPECT_TRUE(to_json(report)["rows"][0]["f1"].is_null());
}

TEST(Sweep, FactorAxisIncludesTheClassicalChain) {
  const auto examples = toy_examples();
  ReferenceBackend backend;
  const auto reports = run_sweep(examples, toy_config(), {{}, {1.0, 0.0}}, backend);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].label, "k=1 factor=1");
  EXPECT_EQ(reports[1].label, "k=1 factor=m");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    EXPECT_EQ(reports[0].rows[i].paths, 1u);
    EXPECT_EQ(reports[1].rows[i].paths, examples[i].contexts.size());
  }
}

TEST(Sweep, TopKGrid) {
  const auto examples = toy_examples();
  ReferenceBackend backend;
  const auto reports = run_sweep(examples, toy_config(), {{1, 2, 4, 8}, {}}, backend);
  ASSERT_EQ(reports.size(), 4u);
  const std::vector<std::string> labels{"k=1 factor=m", "k=2 factor=m", "k=4 factor=m", "k=8 factor=m"};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(reports[i].label, labels[i]);
    EXPECT_EQ(reports[i].failures, 0u);
  }
  // k past the path count keeps every path.
  EXPECT_EQ(reports[3].rows[2].selected.size(), 4u);
  const auto csv = reports_csv(reports);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 1 + 4 * examples.size());
}
