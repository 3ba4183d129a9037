#include "superpose/cost_model.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "superpose/graph.hpp"

namespace superpose {

nlohmann::json to_json(const CostPlan& plan) {
  auto stages = nlohmann::json::array();
  for (const auto& stage : plan.stages) {
    auto branches = nlohmann::json::array();
    for (const auto& branch : stage.branches) {
      auto segs = nlohmann::json::array();
      for (const auto& s : branch.segments) {
        segs.push_back({{"label", s.label}, {"n_new", s.n_new}, {"n_prefix", s.n_prefix}, {"cached", s.cached}});
      }
      branches.push_back(std::move(segs));
    }
    stages.push_back({{"label", stage.label}, {"branches", std::move(branches)}});
  }
  return {{"stages", std::move(stages)}};
}

double segment_macs(const ModelShape& shape, double n_new, double n_ctx) {
  return shape.params * n_new + 2.0 * shape.layers * shape.d_model * n_new * n_ctx;
}

double segment_cost(const ModelShape& shape, const SegmentEval& s) {
  if (s.cached || s.n_new == 0) return 0.0;
  const double n = static_cast<double>(s.n_new);
  return segment_macs(shape, n, static_cast<double>(s.n_prefix) + (n + 1.0) / 2.0);
}

double stage_cycles(const ModelShape& shape, const Stage& stage) {
  double worst = 0.0;
  for (const auto& branch : stage.branches) {
    double sum = 0.0;
    for (const auto& s : branch.segments) sum += segment_cost(shape, s);
    worst = std::max(worst, sum);
  }
  return worst;
}

double compute_cycles(const ModelShape& shape, const CostPlan& plan) {
  double total = 0.0;
  for (const auto& stage : plan.stages) total += stage_cycles(shape, stage);
  return total;
}

void WorkloadSpec::validate() const {
  if (documents.empty()) throw Error(ErrorCode::empty_document_set, "workload has no documents");
}

std::size_t WorkloadSpec::document_tokens() const {
  return std::accumulate(documents.begin(), documents.end(), std::size_t{0});
}

WorkloadSpec uniform_workload(std::string name, std::size_t preamble, std::size_t m,
                              std::size_t doc_length, std::size_t query, std::size_t postamble,
                              std::size_t response) {
  WorkloadSpec w;
  w.name = std::move(name);
  w.preamble = preamble;
  w.documents.assign(m, doc_length);
  w.query = query;
  w.postamble = postamble;
  w.response = response;
  return w;
}

nlohmann::json to_json(const WorkloadSpec& w) {
  return {{"name", w.name},   {"preamble", w.preamble},   {"documents", w.documents},
          {"query", w.query}, {"postamble", w.postamble}, {"response", w.response}};
}

WorkloadSpec workload_from_json(const nlohmann::json& doc) {
  try {
    WorkloadSpec w;
    w.name = doc.value("name", std::string{});
    w.preamble = doc.at("preamble").get<std::size_t>();
    if (doc.contains("documents")) {
      w.documents = doc.at("documents").get<std::vector<std::size_t>>();
    } else {
      w.documents.assign(doc.at("document_count").get<std::size_t>(), doc.at("document_length").get<std::size_t>());
    }
    w.query = doc.at("query").get<std::size_t>();
    w.postamble = doc.at("postamble").get<std::size_t>();
    w.response = doc.at("response").get<std::size_t>();
    w.validate();
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_error, std::string("workload: ") + e.what());
  }
}

WorkloadSpec apply_factor(const WorkloadSpec& workload, double factor) {
  workload.validate();
  if (factor == 0.0) return workload;
  const std::size_t g = documents_per_group(workload.documents.size(), factor);
  WorkloadSpec out = workload;
  out.documents.clear();
  for (std::size_t i = 0; i < workload.documents.size(); i += g) {
    const auto end = std::min(workload.documents.size(), i + g);
    out.documents.push_back(std::accumulate(workload.documents.begin() + static_cast<std::ptrdiff_t>(i),
                                            workload.documents.begin() + static_cast<std::ptrdiff_t>(end),
                                            std::size_t{0}));
  }
  return out;
}

namespace {

void append_decode(CostPlan& plan, std::size_t context, std::size_t response) {
  for (std::size_t j = 0; j < response; ++j) {
    plan.stages.push_back({"decode", {Branch{{{"r" + std::to_string(j), 1, context + j, false}}}}});
  }
}

}  // namespace

CostPlan naive_plan(const WorkloadSpec& w) {
  w.validate();
  const std::size_t prompt = w.preamble + w.document_tokens() + w.query + w.postamble;
  CostPlan plan;
  plan.stages.push_back({"prompt", {Branch{{{"prompt", prompt, 0, false}}}}});
  append_decode(plan, prompt, w.response);
  return plan;
}

CostPlan superposition_plan(const WorkloadSpec& w, SuperpositionFlags flags, std::size_t k,
                            std::optional<std::vector<std::size_t>> kept) {
  w.validate();
  const std::size_t n = w.documents.size();
  CostPlan plan;
  plan.stages.push_back({"preamble", {Branch{{{"p", w.preamble, 0, flags.cache}}}}});

  Stage paths{"paths", {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto tag = std::to_string(i);
    Branch branch{{{"d" + tag, w.documents[i], w.preamble, flags.cache},
                   {"q" + tag, w.query, w.preamble + w.documents[i], false}}};
    if (flags.parallel || paths.branches.empty()) {
      paths.branches.push_back(std::move(branch));
    } else {
      auto& serial = paths.branches.front().segments;
      serial.insert(serial.end(), branch.segments.begin(), branch.segments.end());
    }
  }
  plan.stages.push_back(std::move(paths));

  std::vector<std::size_t> selected;
  if (kept) {
    selected = *kept;
  } else if (flags.prune) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return w.documents[a] > w.documents[b]; });
    order.resize(std::min(std::max<std::size_t>(k, 1), n));
    selected = std::move(order);
  } else {
    selected.resize(n);
    std::iota(selected.begin(), selected.end(), 0);
  }
  std::size_t context = w.preamble;
  for (std::size_t i : selected) context += w.documents.at(i) + w.query;
  plan.stages.push_back({"postamble", {Branch{{{"t", w.postamble, context, false}}}}});
  append_decode(plan, context + w.postamble, w.response);
  return plan;
}

CostPlan ranking_plan(const WorkloadSpec& w, std::size_t k) {
  w.validate();
  k = std::clamp<std::size_t>(k, 1, w.documents.size());
  CostPlan plan;
  Branch chain;
  chain.segments.push_back({"p", w.preamble, 0, true});
  chain.segments.push_back({"d0", w.documents[0], w.preamble, true});
  std::size_t context = w.preamble + w.documents[0];
  for (std::size_t i = 1; i < k; ++i) {
    chain.segments.push_back({"d" + std::to_string(i), w.documents[i], context, false});
    context += w.documents[i];
  }
  chain.segments.push_back({"q", w.query, context, false});
  context += w.query;
  chain.segments.push_back({"t", w.postamble, context, false});
  context += w.postamble;
  plan.stages.push_back({"prompt", {std::move(chain)}});
  append_decode(plan, context, w.response);
  return plan;
}

CostPlan attention_sort_plan(const WorkloadSpec& w, std::size_t passes) {
  w.validate();
  const std::size_t prompt = w.preamble + w.document_tokens() + w.query + w.postamble;
  CostPlan plan;
  for (std::size_t i = 0; i < passes; ++i) {
    plan.stages.push_back({"pass" + std::to_string(i), {Branch{{{"prompt", prompt, 0, false}}}}});
  }
  append_decode(plan, prompt, w.response);
  return plan;
}

CostPlan prompt_cache_plan(const WorkloadSpec& w) {
  w.validate();
  const std::size_t docs = w.preamble + w.document_tokens();
  CostPlan plan;
  plan.stages.push_back({"prompt",
                         {Branch{{{"p+docs", docs, 0, true},
                                  {"q", w.query, docs, false},
                                  {"t", w.postamble, docs + w.query, false}}}}});
  append_decode(plan, docs + w.query + w.postamble, w.response);
  return plan;
}

CostPlan plan_for(const WorkloadSpec& workload, const CostVariant& v) {
  switch (v.method) {
    case CostMethod::naive: return naive_plan(workload);
    case CostMethod::superposition: return superposition_plan(apply_factor(workload, v.factor), v.flags, v.k);
    case CostMethod::ranking: return ranking_plan(workload, v.k);
    case CostMethod::attention_sort: return attention_sort_plan(workload, v.passes);
    case CostMethod::prompt_cache: return prompt_cache_plan(workload);
  }
  return naive_plan(workload);
}

std::vector<CostRow> speedup_report(const WorkloadSpec& workload, const ModelShape& shape,
                                    std::span<const CostVariant> variants) {
  std::vector<CostRow> rows;
  double baseline = 0.0;
  for (const auto& v : variants) {
    CostRow row{v.name, 0.0, 0.0, plan_for(workload, v)};
    row.cycles = compute_cycles(shape, row.plan);
    if (baseline == 0.0 && v.method == CostMethod::naive) baseline = row.cycles;
    rows.push_back(std::move(row));
  }
  if (baseline == 0.0) throw Error(ErrorCode::invalid_argument, "speedup report needs a naive variant");
  for (auto& row : rows) row.speedup = row.cycles > 0.0 ? baseline / row.cycles : 0.0;
  return rows;
}

std::vector<CostVariant> standard_variants(std::size_t k, double factor) {
  std::vector<CostVariant> out;
  out.push_back({"naive", CostMethod::naive});
  for (int bits = 0; bits < 8; ++bits) {
    SuperpositionFlags f{(bits & 4) != 0, (bits & 2) != 0, (bits & 1) != 0};
    std::string name = std::string("superposition prune=") + (f.prune ? "1" : "0") +
                       " cache=" + (f.cache ? "1" : "0") + " parallel=" + (f.parallel ? "1" : "0");
    out.push_back({std::move(name), CostMethod::superposition, f, k, factor});
  }
  out.push_back({"ranking k=" + std::to_string(k), CostMethod::ranking, {}, k});
  out.push_back({"attention-sort", CostMethod::attention_sort});
  out.push_back({"prompt-cache", CostMethod::prompt_cache});
  return out;
}

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string report_csv(std::span<const CostRow> rows, const ModelShape* breakdown_shape) {
  std::ostringstream out;
  out << "variant,cycles,speedup";
  if (breakdown_shape != nullptr) out << ",stage,stage_cycles";
  out << '\n';
  for (const auto& row : rows) {
    if (breakdown_shape == nullptr) {
      out << '"' << row.name << "\"," << sci(row.cycles) << ',' << fixed(row.speedup, 2) << '\n';
      continue;
    }
    for (const auto& stage : row.plan.stages) {
      out << '"' << row.name << "\"," << sci(row.cycles) << ',' << fixed(row.speedup, 2) << ','
          << stage.label << ',' << sci(stage_cycles(*breakdown_shape, stage)) << '\n';
    }
  }
  return out.str();
}

std::string report_table(std::span<const CostRow> rows) {
  std::size_t width = 7;
  for (const auto& row : rows) width = std::max(width, row.name.size());
  std::ostringstream out;
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  out << pad("variant", width) << "  " << pad("cycles", 10) << "  speedup\n";
  for (const auto& row : rows) {
    out << pad(row.name, width) << "  " << pad(sci(row.cycles), 10) << "  " << fixed(row.speedup, 1) << '\n';
  }
  return out.str();
}

}  // namespace superpose
