// Command-line front end: preprocess, serve, eval, cost, sweep, bridge.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "superpose/backend_factory.hpp"
#include "superpose/bridge_server.hpp"
#include "superpose/cost_model.hpp"
#include "superpose/experiment.hpp"
#include "superpose/metrics.hpp"

using namespace superpose;

namespace {

struct Options {
  std::string backend = "reference-alibi";
  std::string positioning = "equilibrium";
  std::string saliency = "bayesian";
  std::string variant = "query_likelihood";
  std::size_t top_k = 1;
  std::optional<double> threshold;
  double factor = 0.0;
  std::size_t iters = 1;
  std::string cache_dir;
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = 64;
  std::string out = "json";
  std::string dataset;
  std::optional<std::size_t> index;
  std::string question;
  std::vector<std::string> contexts;
  std::string template_path;
  bool no_cache = false;
  bool parallel = false;
  bool no_prune = false;
  bool no_prior = false;
  bool timing = false;

  std::string model = "mpt-7b";
  std::string workload = "nq";
  std::string workload_file;
  std::string presets_file;
  bool breakdown = false;
  bool dump_presets = false;

  std::vector<std::size_t> k_values;
  std::vector<double> factors;

  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

std::string dump(const nlohmann::json& doc) {
  return doc.dump(2, ' ', false, nlohmann::json::error_handler_t::replace);
}

ServingPlan make_plan(const Options& o) {
  ServingPlan plan;
  plan.positioning = positioning_from_string(o.positioning);
  plan.saliency = saliency_metric_from_string(o.saliency);
  if (o.variant == "printed") {
    plan.variant = BayesianVariant::printed;
  } else if (o.variant != "query_likelihood") {
    throw Error(ErrorCode::invalid_argument, "unknown bayesian variant '" + o.variant + "'");
  }
  plan.include_prior = !o.no_prior;
  plan.top_k = o.top_k;
  plan.threshold = o.threshold;
  plan.factor = o.factor;
  plan.iterations = o.iters;
  plan.flags.use_cache = !o.no_cache;
  plan.flags.parallel_paths = o.parallel;
  plan.flags.prune = !o.no_prune;
  plan.max_new_tokens = o.max_new_tokens;
  plan.eos = kEosToken;
  plan.validate();
  return plan;
}

PromptTemplate load_template(const Options& o) {
  if (o.template_path.empty()) return default_template();
  std::ifstream in(o.template_path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + o.template_path);
  try {
    return template_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse_error, o.template_path + ": " + e.what());
  }
}

std::unique_ptr<CacheStore> open_store(const Options& o, const Backend& backend) {
  if (o.cache_dir.empty()) return nullptr;
  return std::make_unique<CacheStore>(backend.shape(), CacheStoreOptions{.directory = o.cache_dir});
}

// Examples from --dataset (optionally one --index) or a single inline --question.
std::vector<RagExample> load_examples(const Options& o) {
  if (!o.dataset.empty()) {
    auto all = ingest(o.dataset, o.seed);
    if (!o.index) return all;
    if (*o.index >= all.size()) throw Error(ErrorCode::invalid_argument, "--index past the end of the dataset");
    return {all[*o.index]};
  }
  if (o.question.empty() || o.contexts.empty()) {
    throw Error(ErrorCode::invalid_argument, "give --dataset, or --question with at least one --context");
  }
  RagExample ex;
  ex.question = o.question;
  ex.answers = {""};
  for (const auto& c : o.contexts) {
    const auto sep = c.find("::");
    if (sep == std::string::npos) {
      ex.contexts.push_back({"", c, std::nullopt});
    } else {
      ex.contexts.push_back({c.substr(0, sep), c.substr(sep + 2), std::nullopt});
    }
  }
  return {ex};
}

struct Encoded {
  std::vector<TokenId> preamble, query, postamble;
  std::vector<std::vector<TokenId>> documents;
};

Encoded encode(const PromptTemplate& tmpl, const RagExample& ex) {
  const auto r = render_prompt(tmpl, ex);
  Encoded e{encode_bytes(r.preamble), encode_bytes(r.query), encode_bytes(r.postamble), {}};
  for (const auto& d : r.documents) e.documents.push_back(encode_bytes(d));
  return e;
}

int cmd_preprocess(const Options& o) {
  auto backend = make_backend(o.backend);
  auto store = open_store(o, *backend);
  if (!store) throw Error(ErrorCode::invalid_argument, "preprocess needs --cache-dir");
  const auto plan = make_plan(o);
  const auto tmpl = load_template(o);
  Engine engine(*backend, store.get());
  nlohmann::json rows = nlohmann::json::array();
  const auto examples = load_examples(o);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto e = encode(tmpl, examples[i]);
    backend->reset_calls();
    const auto corpus = engine.preprocess(e.preamble, e.documents, plan.positioning, plan.factor);
    nlohmann::json keys = nlohmann::json::array();
    keys.push_back(corpus.preamble_cache.fingerprint().hex());
    for (const auto& d : corpus.document_caches) keys.push_back(d.fingerprint().hex());
    rows.push_back({{"index", o.index.value_or(i)},
                    {"paths", corpus.path_count()},
                    {"computed", backend->calls().extend},
                    {"keys", std::move(keys)}});
  }
  const auto stats = store->stats();
  if (o.out == "csv") {
    std::cout << "index,paths,computed\n";
    for (const auto& r : rows) std::cout << r["index"] << ',' << r["paths"] << ',' << r["computed"] << '\n';
  } else {
    std::cout << dump({{"cache_dir", o.cache_dir},
                       {"examples", rows},
                       {"store", {{"hits", stats.hits}, {"misses", stats.misses}, {"puts", stats.puts}}}})
              << '\n';
  }
  return 0;
}

int cmd_serve(const Options& o) {
  auto backend = make_backend(o.backend);
  auto store = open_store(o, *backend);
  const auto plan = make_plan(o);
  const auto tmpl = load_template(o);
  auto examples = load_examples(o);
  if (examples.size() != 1) {
    if (!o.index) examples.resize(1);  // first example when no --index is given
  }
  const auto& ex = examples.front();
  const auto e = encode(tmpl, ex);
  Engine engine(*backend, store.get());
  const auto corpus = engine.preprocess(e.preamble, e.documents, plan.positioning, plan.factor);
  const auto result = plan.iterations > 1 ? engine.serve_iterative(corpus, plan, e.query, e.postamble)
                                          : engine.serve(corpus, plan, e.query, e.postamble);
  const auto text = decode_bytes(result.response);
  auto doc = to_json(result, backend->shape(), o.timing);
  doc["text"] = text;
  doc["question"] = ex.question;
  if (!o.dataset.empty()) {
    const auto score = answer_em_f1(text, ex.answers);
    doc["metrics"] = {{"best_em_subspan", best_em_subspan(text, ex.answers)}, {"em", score.em}, {"f1", score.f1}};
  }
  if (o.out == "csv") {
    std::cout << "paths,selected,cycles,path_evaluations\n"
              << corpus.path_count() << ",\"";
    for (std::size_t i = 0; i < result.selected.size(); ++i) std::cout << (i ? " " : "") << result.selected[i];
    std::cout << "\"," << result.cycles << ',' << result.path_evaluations << '\n';
  } else {
    std::cout << dump(doc) << '\n';
  }
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

ExperimentConfig experiment_config(const Options& o) {
  ExperimentConfig c;
  c.plan = make_plan(o);
  c.prompt = load_template(o);
  c.seed = o.seed;
  c.backend = o.backend;
  return c;
}

int cmd_eval(const Options& o) {
  if (o.dataset.empty()) throw Error(ErrorCode::invalid_argument, "eval needs --dataset");
  auto backend = make_backend(o.backend);
  auto store = open_store(o, *backend);
  const auto examples = load_examples(o);
  auto report = run_experiment(examples, experiment_config(o), *backend, store.get());
  report.label = "eval";
  if (o.out == "csv") {
    std::cout << reports_csv(std::vector{report});
  } else {
    std::cout << dump(to_json(report)) << '\n';
  }
  return report.count == 0 && !examples.empty() ? 1 : 0;
}

int cmd_sweep(const Options& o) {
  if (o.dataset.empty()) throw Error(ErrorCode::invalid_argument, "sweep needs --dataset");
  auto backend = make_backend(o.backend);
  auto store = open_store(o, *backend);
  const auto examples = load_examples(o);
  const auto reports = run_sweep(examples, experiment_config(o), {o.k_values, o.factors}, *backend, store.get());
  if (o.out == "csv") {
    std::cout << reports_csv(reports);
  } else {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : reports) all.push_back(to_json(r));
    std::cout << dump(all) << '\n';
  }
  return 0;
}

int cmd_cost(const Options& o) {
  if (o.dump_presets) {
    std::cout << presets_to_json().dump(2) << '\n';
    return 0;
  }
  std::vector<ModelShape> models = builtin_model_presets();
  std::vector<WorkloadSpec> workloads = builtin_workload_presets();
  if (!o.presets_file.empty()) {
    std::ifstream in(o.presets_file);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + o.presets_file);
    load_presets_json(nlohmann::json::parse(in), models, workloads);
  }
  auto find_model = [&](const std::string& name) {
    for (const auto& m : models)
      if (m.name == name) return m;
    throw Error(ErrorCode::invalid_argument, "unknown model preset '" + name + "'");
  };
  WorkloadSpec workload;
  if (!o.workload_file.empty()) {
    std::ifstream in(o.workload_file);
    if (!in) throw Error(ErrorCode::io_error, "cannot open " + o.workload_file);
    workload = workload_from_json(nlohmann::json::parse(in));
  } else {
    bool found = false;
    for (const auto& w : workloads) {
      if (w.name == o.workload) {
        workload = w;
        found = true;
      }
    }
    if (!found) throw Error(ErrorCode::invalid_argument, "unknown workload preset '" + o.workload + "'");
  }
  if (o.factor != 0.0 && o.factor < 1.0) throw Error(ErrorCode::factor_out_of_range, "factor must be >= 1");
  const auto shape = find_model(o.model);
  const auto rows = speedup_report(workload, shape, standard_variants(o.top_k, o.factor));
  if (o.out == "csv") {
    std::cout << report_csv(rows, o.breakdown ? &shape : nullptr);
  } else if (o.out == "table") {
    std::cout << "model " << shape.name << ", workload " << workload.name << " (" << workload.documents.size()
              << " documents)\n"
              << report_table(rows);
  } else {
    nlohmann::json out = {{"model", to_json(shape)}, {"workload", to_json(workload)}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rows) {
      nlohmann::json row = {{"variant", r.name}, {"cycles", r.cycles}, {"speedup", r.speedup}};
      if (o.breakdown) {
        auto plan = to_json(r.plan);
        for (std::size_t i = 0; i < r.plan.stages.size(); ++i)
          plan["stages"][i]["cycles"] = stage_cycles(shape, r.plan.stages[i]);
        row["plan"] = std::move(plan);
      }
      out["rows"].push_back(std::move(row));
    }
    std::cout << dump(out) << '\n';
  }
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;

int cmd_bridge(const Options& o) {
  auto backend = make_backend(o.backend);
  BridgeServer server(*backend, {.host = o.host, .port = o.port});
  std::cout << server.address() << std::endl;
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

void add_serving_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--backend", o.backend, "reference-alibi | reference-rotary | remote:<host>:<port>");
  cmd->add_option("--positioning", o.positioning, "equilibrium | left_aligned");
  cmd->add_option("--saliency", o.saliency, "bayesian | attention | none");
  cmd->add_option("--bayesian-variant", o.variant, "query_likelihood | printed");
  cmd->add_option("--top-k", o.top_k, "paths kept after scoring");
  cmd->add_option("--threshold", o.threshold, "keep paths with posterior >= threshold instead of top k");
  cmd->add_option("--factor", o.factor, "superposition factor; 0 = one document per path");
  cmd->add_option("--iters", o.iters, "iterative superposition steps");
  cmd->add_option("--cache-dir", o.cache_dir, "persistent KV cache directory");
  cmd->add_option("--seed", o.seed, "document shuffle seed");
  cmd->add_option("--max-new-tokens", o.max_new_tokens, "decode budget");
  cmd->add_option("--out", o.out, "json | csv");
  cmd->add_option("--dataset", o.dataset, "JSON Lines file");
  cmd->add_option("--index", o.index, "use one example of the dataset");
  cmd->add_option("--question", o.question, "inline question");
  cmd->add_option("--context", o.contexts, "inline context, 'Title::text' (repeatable)");
  cmd->add_option("--template", o.template_path, "prompt template JSON");
  cmd->add_flag("--no-cache", o.no_cache, "recompute preamble and documents online");
  cmd->add_flag("--parallel", o.parallel, "evaluate paths concurrently");
  cmd->add_flag("--no-prune", o.no_prune, "keep every path");
  cmd->add_flag("--no-prior", o.no_prior, "drop the document prior from the score");
  cmd->add_flag("--timing", o.timing, "include wall-clock time");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Superposition prompting for retrieval-augmented generation"};
  app.require_subcommand(1);
  Options o;

  auto* preprocess = app.add_subcommand("preprocess", "compute and store preamble and document KV");
  add_serving_flags(preprocess, o);
  auto* serve = app.add_subcommand("serve", "answer one query");
  add_serving_flags(serve, o);
  auto* eval = app.add_subcommand("eval", "run a dataset and report metrics");
  add_serving_flags(eval, o);
  auto* sweep = app.add_subcommand("sweep", "grid over top-k and superposition factor");
  add_serving_flags(sweep, o);
  sweep->add_option("--k-values", o.k_values, "top-k values")->delimiter(',');
  sweep->add_option("--factors", o.factors, "superposition factors (0 = m)")->delimiter(',');

  auto* cost = app.add_subcommand("cost", "compute-cycle report");
  cost->add_option("--model", o.model, "model preset");
  cost->add_option("--workload", o.workload, "workload preset");
  cost->add_option("--workload-file", o.workload_file, "workload JSON");
  cost->add_option("--presets", o.presets_file, "extra presets JSON");
  cost->add_option("--top-k", o.top_k, "paths kept when pruning");
  cost->add_option("--factor", o.factor, "superposition factor; 0 = one document per path");
  cost->add_option("--out", o.out, "json | csv | table");
  cost->add_flag("--breakdown", o.breakdown, "per-stage cycles");
  cost->add_flag("--dump-presets", o.dump_presets, "print the built-in presets as JSON");

  auto* bridge = app.add_subcommand("bridge", "serve a backend over the bridge protocol");
  bridge->add_option("--backend", o.backend, "backend to expose");
  bridge->add_option("--host", o.host, "listen address");
  bridge->add_option("--port", o.port, "listen port; 0 picks one");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*preprocess) return cmd_preprocess(o);
    if (*serve) return cmd_serve(o);
    if (*eval) return cmd_eval(o);
    if (*sweep) return cmd_sweep(o);
    if (*cost) return cmd_cost(o);
    if (*bridge) return cmd_bridge(o);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
