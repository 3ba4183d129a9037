#include "superpose/experiment.hpp"

#include <cstdio>
#include <sstream>

#include "superpose/metrics.hpp"

namespace superpose {

namespace {

nlohmann::json optional_json(const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

EvalReport run_experiment(std::span<const RagExample> examples, const ExperimentConfig& config,
                          Backend& backend, CacheStore* store) {
  config.plan.validate();
  Engine engine(backend, store);
  EvalReport report;
  report.config = {{"plan", to_json(config.plan)}, {"seed", config.seed}, {"backend", config.backend}};

  double sum_subspan = 0.0, sum_em = 0.0, sum_f1 = 0.0, sum_cycles = 0.0, sum_speedup = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ExampleRow row;
    row.index = i;
    try {
      const auto prompt = render_prompt(config.prompt, examples[i]);
      const auto preamble = encode_bytes(prompt.preamble);
      std::vector<std::vector<TokenId>> documents;
      for (const auto& d : prompt.documents) documents.push_back(encode_bytes(d));
      const auto query = encode_bytes(prompt.query);
      const auto postamble = encode_bytes(prompt.postamble);

      const auto corpus = engine.preprocess(preamble, documents, config.plan.positioning, config.plan.factor);
      row.paths = corpus.path_count();
      const auto result = config.plan.iterations > 1
                              ? engine.serve_iterative(corpus, config.plan, query, postamble)
                              : engine.serve(corpus, config.plan, query, postamble);

      const auto text = decode_bytes(result.response);
      row.response = text;
      row.subspan = best_em_subspan(text, examples[i].answers);
      const auto score = answer_em_f1(text, examples[i].answers);
      row.em = score.em;
      row.f1 = score.f1;
      row.selected = result.selected;
      row.cycles = result.cycles;
      row.path_evaluations = result.path_evaluations;

      WorkloadSpec w;
      w.preamble = preamble.size();
      for (const auto& d : documents) w.documents.push_back(d.size());
      w.query = query.size();
      w.postamble = postamble.size();
      w.response = result.response.size();
      row.naive_cycles = compute_cycles(backend.shape(), naive_plan(w));

      sum_subspan += *row.subspan;
      sum_em += *row.em;
      sum_f1 += *row.f1;
      sum_cycles += *row.cycles;
      sum_speedup += *row.naive_cycles / *row.cycles;
      ++report.count;
    } catch (const std::exception& e) {
      row.error = e.what();
      ++report.failures;
    }
    report.rows.push_back(std::move(row));
  }
  if (report.count > 0) {
    const auto n = static_cast<double>(report.count);
    report.mean_subspan = sum_subspan / n;
    report.mean_em = sum_em / n;
    report.mean_f1 = sum_f1 / n;
    report.mean_cycles = sum_cycles / n;
    report.mean_speedup = sum_speedup / n;
  }
  return report;
}

std::vector<EvalReport> run_sweep(std::span<const RagExample> examples, const ExperimentConfig& config,
                                  const SweepGrid& grid, Backend& backend, CacheStore* store) {
  const std::vector<std::size_t> ks = grid.top_k.empty() ? std::vector{config.plan.top_k} : grid.top_k;
  const std::vector<double> factors = grid.factors.empty() ? std::vector{config.plan.factor} : grid.factors;
  std::vector<EvalReport> out;
  for (double factor : factors) {
    for (std::size_t k : ks) {
      ExperimentConfig c = config;
      c.plan.top_k = k;
      c.plan.factor = factor;
      auto report = run_experiment(examples, c, backend, store);
      std::ostringstream label;
      label << "k=" << k << " factor=" << (factor == 0.0 ? std::string("m") : format_number(factor));
      report.label = label.str();
      out.push_back(std::move(report));
    }
  }
  return out;
}

nlohmann::json to_json(const EvalReport& report) {
  auto rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"index", r.index},
                    {"paths", r.paths},
                    {"response", optional_json(r.response)},
                    {"best_em_subspan", optional_json(r.subspan)},
                    {"em", optional_json(r.em)},
                    {"f1", optional_json(r.f1)},
                    {"selected", r.selected},
                    {"cycles", optional_json(r.cycles)},
                    {"naive_cycles", optional_json(r.naive_cycles)},
                    {"path_evaluations", r.path_evaluations},
                    {"error", optional_json(r.error)}});
  }
  return {{"label", report.label},
          {"config", report.config},
          {"count", report.count},
          {"failures", report.failures},
          {"mean_best_em_subspan", report.mean_subspan},
          {"mean_em", report.mean_em},
          {"mean_f1", report.mean_f1},
          {"mean_cycles", report.mean_cycles},
          {"mean_speedup", report.mean_speedup},
          {"rows", std::move(rows)}};
}

std::string reports_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "label,index,paths,best_em_subspan,em,f1,cycles,naive_cycles,path_evaluations,error\n";
  auto opt = [](const auto& v) { return v ? format_number(static_cast<double>(*v)) : std::string(); };
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      out << csv_field(rep.label) << ',' << r.index << ',' << r.paths << ',' << opt(r.subspan) << ','
          << opt(r.em) << ',' << opt(r.f1) << ',' << opt(r.cycles) << ',' << opt(r.naive_cycles) << ','
          << r.path_evaluations << ',' << (r.error ? csv_field(*r.error) : std::string()) << '\n';
    }
  }
  return out.str();
}

}  // namespace superpose
