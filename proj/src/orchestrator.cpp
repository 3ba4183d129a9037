#include "superpose/orchestrator.hpp"

#include <algorithm>
#include <chrono>

namespace superpose {

void ServingPlan::validate() const {
  if (top_k == 0) throw Error(ErrorCode::invalid_argument, "top_k must be at least 1");
  if (iterations == 0) throw Error(ErrorCode::invalid_argument, "iterations must be at least 1");
  if (factor != 0.0 && factor < 1.0) throw Error(ErrorCode::factor_out_of_range, "factor must be >= 1");
  if (threshold && (*threshold < 0.0 || *threshold > 1.0)) {
    throw Error(ErrorCode::invalid_argument, "threshold must lie in [0, 1]");
  }
}

nlohmann::json to_json(const ServingPlan& plan) {
  return {{"positioning", to_string(plan.positioning)},
          {"saliency", to_string(plan.saliency)},
          {"bayesian_variant", plan.variant == BayesianVariant::printed ? "printed" : "query_likelihood"},
          {"include_prior", plan.include_prior},
          {"top_k", plan.top_k},
          {"threshold", plan.threshold ? nlohmann::json(*plan.threshold) : nlohmann::json()},
          {"factor", plan.factor},
          {"iterations", plan.iterations},
          {"use_cache", plan.flags.use_cache},
          {"parallel_paths", plan.flags.parallel_paths},
          {"prune", plan.flags.prune},
          {"max_new_tokens", plan.max_new_tokens},
          {"eos", plan.eos}};
}

ServingPlan serving_plan_from_json(const nlohmann::json& doc) {
  try {
    ServingPlan p;
    if (doc.contains("positioning")) p.positioning = positioning_from_string(doc["positioning"].get<std::string>());
    if (doc.contains("saliency")) p.saliency = saliency_metric_from_string(doc["saliency"].get<std::string>());
    if (doc.contains("bayesian_variant")) {
      const auto v = doc["bayesian_variant"].get<std::string>();
      if (v == "printed") {
        p.variant = BayesianVariant::printed;
      } else if (v != "query_likelihood") {
        throw Error(ErrorCode::schema_error, "unknown bayesian_variant '" + v + "'");
      }
    }
    p.include_prior = doc.value("include_prior", p.include_prior);
    p.top_k = doc.value("top_k", p.top_k);
    if (doc.contains("threshold") && !doc["threshold"].is_null()) p.threshold = doc["threshold"].get<double>();
    p.factor = doc.value("factor", p.factor);
    p.iterations = doc.value("iterations", p.iterations);
    p.flags.use_cache = doc.value("use_cache", p.flags.use_cache);
    p.flags.parallel_paths = doc.value("parallel_paths", p.flags.parallel_paths);
    p.flags.prune = doc.value("prune", p.flags.prune);
    p.max_new_tokens = doc.value("max_new_tokens", p.max_new_tokens);
    p.eos = doc.value("eos", p.eos);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_error, std::string("serving plan: ") + e.what());
  }
}

nlohmann::json to_json(const ServingResult& r, const ModelShape& shape, bool include_timing) {
  auto scores = nlohmann::json::array();
  for (const auto& s : r.scores) {
    scores.push_back({{"path", s.path},
                      {"query_term", s.query_term},
                      {"prior_term", s.prior_term},
                      {"score", s.score},
                      {"posterior", s.posterior}});
  }
  auto ledger = to_json(r.ledger);
  for (std::size_t i = 0; i < r.ledger.stages.size(); ++i) {
    ledger["stages"][i]["cycles"] = stage_cycles(shape, r.ledger.stages[i]);
  }
  nlohmann::json out = {{"response", r.response},
                        {"selected", r.selected},
                        {"steps", r.steps},
                        {"scores", std::move(scores)},
                        {"path_evaluations", r.path_evaluations},
                        {"backend_calls", {{"extend", r.calls.extend}, {"batch", r.calls.batch}}},
                        {"cycles", r.cycles},
                        {"ledger", std::move(ledger)},
                        {"warnings", r.warnings}};
  if (include_timing) out["elapsed_ms"] = r.elapsed_ms;
  return out;
}

Engine::Engine(Backend& backend, CacheStore* store) : backend_(backend), store_(store) {
  if (store_ != nullptr && !(store_->shape().layers == backend_.shape().layers &&
                             store_->shape().d_model == backend_.shape().d_model)) {
    throw Error(ErrorCode::dimension_mismatch, "cache store shape does not match the backend");
  }
}

void Engine::clear_memo() {
  std::lock_guard lock(memo_mutex_);
  for (const auto& [key, entry] : memo_) backend_.release(entry.first);
  memo_.clear();
}

Engine::Computed Engine::extend_cached(std::span<const KVCacheHandle> prefix, std::span<const TokenId> tokens,
                                       const PositionVector& positions) {
  const auto& model_id = backend_.model_id();
  const auto key = derive_fingerprint(model_id, prefix, tokens, positions);
  if (store_ != nullptr && backend_.exports_tensors()) {
    std::optional<CacheRecord> record;
    try {
      record = store_->get(key);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::corrupt_record) throw;  // a corrupt entry is recomputed and replaced
    }
    if (record && !record->logits.empty()) {
      return {KVCacheHandle(model_id, import_block(*record)), std::move(record->logits), true};
    }
    auto r = backend_.extend(prefix, tokens, positions);
    store_->put(export_block(*r.cache.blocks().front(), model_id, backend_.shape(), &r.logits));
    return {std::move(r.cache), std::move(r.logits), false};
  }
  {
    std::lock_guard lock(memo_mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return {it->second.first, it->second.second, true};
  }
  auto r = backend_.extend(prefix, tokens, positions);
  std::lock_guard lock(memo_mutex_);
  memo_.emplace(key, std::make_pair(r.cache, r.logits));
  return {std::move(r.cache), std::move(r.logits), false};
}

Corpus Engine::preprocess(std::span<const TokenId> preamble, std::span<const std::vector<TokenId>> documents,
                          PositioningStrategy positioning, double factor) {
  if (documents.empty()) throw Error(ErrorCode::empty_document_set, "corpus has no documents");
  if (preamble.empty()) throw Error(ErrorCode::empty_segment, "preamble is empty");
  for (const auto& d : documents) {
    if (d.empty()) throw Error(ErrorCode::empty_segment, "corpus contains an empty document");
  }

  Corpus c;
  c.positioning = positioning;
  c.factor = factor;
  c.preamble.assign(preamble.begin(), preamble.end());
  if (factor == 0.0) {
    c.documents.assign(documents.begin(), documents.end());
  } else {
    std::vector<TokenSegment> segs;
    for (std::size_t i = 0; i < documents.size(); ++i) {
      segs.push_back({static_cast<SegmentId>(i), documents[i], SegmentKind::document});
    }
    for (auto& g : group_documents(segs, factor)) c.documents.push_back(std::move(g.tokens));
  }

  c.preamble_positions = arange_positions(0.0, 1.0, c.preamble.size());
  std::vector<std::size_t> lengths;
  for (const auto& d : c.documents) lengths.push_back(d.size());
  auto fork = position_fork(c.preamble_positions.back() + 1.0, lengths, positioning);
  c.document_positions = std::move(fork.documents);
  c.query_start = fork.query_start;

  auto p = extend_cached({}, c.preamble, c.preamble_positions);
  c.preamble_cache = p.cache;
  c.preamble_logits = std::move(p.logits);
  const std::vector<KVCacheHandle> prefix{c.preamble_cache};
  for (std::size_t i = 0; i < c.documents.size(); ++i) {
    auto d = extend_cached(prefix, c.documents[i], c.document_positions[i]);
    c.document_caches.push_back(std::move(d.cache));
    c.document_logits.push_back(std::move(d.logits));
  }
  return c;
}

ServingResult Engine::serve(const Corpus& corpus, const ServingPlan& plan, std::span<const TokenId> query,
                            std::span<const TokenId> postamble) {
  return run(corpus, plan, query, postamble, 1);
}

ServingResult Engine::serve_iterative(const Corpus& corpus, const ServingPlan& plan,
                                      std::span<const TokenId> query, std::span<const TokenId> postamble) {
  return run(corpus, plan, query, postamble, plan.iterations);
}

ServingResult Engine::run(const Corpus& corpus, const ServingPlan& plan, std::span<const TokenId> query,
                          std::span<const TokenId> postamble, std::size_t iterations) {
  plan.validate();
  if (query.empty()) throw Error(ErrorCode::empty_segment, "query is empty");
  if (postamble.empty()) throw Error(ErrorCode::empty_segment, "postamble is empty");
  if (corpus.path_count() == 0) throw Error(ErrorCode::empty_document_set, "corpus has no documents");
  if (corpus.positioning != plan.positioning) {
    throw Error(ErrorCode::invalid_argument, "corpus was positioned with a different strategy");
  }
  const std::size_t n = corpus.path_count();
  if (iterations > 1 && iterations * plan.top_k > n) {
    throw Error(ErrorCode::iteration_budget_exceeded,
                std::to_string(iterations) + " iterations of k=" + std::to_string(plan.top_k) +
                    " need more than " + std::to_string(n) + " documents");
  }

  const auto started = std::chrono::steady_clock::now();
  const auto calls_before = backend_.calls();
  const bool parallel = plan.flags.parallel_paths;
  const bool want_attention = plan.saliency == SaliencyMetric::attention;
  ServingResult res;
  std::vector<KVCacheHandle> transient;

  // Preamble and document KV: from preprocessing, or recomputed here.
  KVCacheHandle p_cache = corpus.preamble_cache;
  LogitBlock p_logits = corpus.preamble_logits;
  std::vector<KVCacheHandle> doc_caches = corpus.document_caches;
  std::vector<LogitBlock> doc_logits = corpus.document_logits;
  std::vector<bool> doc_cached(n, plan.flags.use_cache);
  if (!plan.flags.use_cache) {
    auto p = backend_.extend({}, corpus.preamble, corpus.preamble_positions);
    p_cache = p.cache;
    p_logits = std::move(p.logits);
    transient.push_back(p_cache);
    const std::vector<KVCacheHandle> prefix{p_cache};
    for (std::size_t i = 0; i < n; ++i) {
      auto d = backend_.extend(prefix, corpus.documents[i], corpus.document_positions[i]);
      doc_caches[i] = d.cache;
      doc_logits[i] = std::move(d.logits);
      transient.push_back(doc_caches[i]);
    }
  }
  res.ledger.stages.push_back({"preamble", {Branch{{{"p", corpus.preamble.size(), 0, plan.flags.use_cache}}}}});

  const bool score_query = query.size() >= 2;
  if (plan.saliency == SaliencyMetric::bayesian && !score_query) {
    res.warnings.push_back("query has fewer than 2 tokens; scoring with the document prior only");
  }

  KVCacheHandle running = p_cache;
  std::size_t running_tokens = corpus.preamble.size();
  double running_max = p_cache.max_position();
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  double query_start = corpus.query_start;

  for (std::size_t step = 0; step < iterations; ++step) {
    if (step > 0) {
      // Later steps condition the remaining documents on the running prefix.
      std::vector<std::size_t> lengths;
      for (std::size_t i : pool) lengths.push_back(corpus.documents[i].size());
      auto fork = position_fork(running_max + 1.0, lengths, plan.positioning);
      const std::vector<KVCacheHandle> prefix{running};
      for (std::size_t j = 0; j < pool.size(); ++j) {
        const std::size_t i = pool[j];
        auto d = backend_.extend(prefix, corpus.documents[i], fork.documents[j]);
        doc_caches[i] = d.cache;
        doc_logits[i] = std::move(d.logits);
        doc_cached[i] = false;
        transient.push_back(doc_caches[i]);
      }
      query_start = fork.query_start;
    }

    const auto q_positions = arange_positions(query_start, 1.0, query.size());
    std::vector<std::vector<KVCacheHandle>> prefixes;
    for (std::size_t i : pool) prefixes.push_back({running, doc_caches[i]});
    auto evaluated = unwrap(backend_.extend_batch(prefixes, query, q_positions, want_attention, parallel));
    res.path_evaluations += pool.size();
    for (const auto& e : evaluated) transient.push_back(e.cache);

    Stage stage{"paths" + std::to_string(step + 1), {}};
    for (std::size_t i : pool) {
      const std::size_t d_len = corpus.documents[i].size();
      Branch b{{{"d" + std::to_string(i), d_len, running_tokens, doc_cached[i]},
                {"q" + std::to_string(i), query.size(), running_tokens + d_len, false}}};
      if (parallel || stage.branches.empty()) {
        stage.branches.push_back(std::move(b));
      } else {
        auto& serial = stage.branches.front().segments;
        serial.insert(serial.end(), b.segments.begin(), b.segments.end());
      }
    }
    res.ledger.stages.push_back(std::move(stage));

    std::vector<PathScore> scores;
    switch (plan.saliency) {
      case SaliencyMetric::bayesian: {
        std::vector<PathEvidence> evidence;
        for (std::size_t j = 0; j < pool.size(); ++j) {
          const std::size_t i = pool[j];
          PathEvidence ev;
          if (corpus.documents[i].size() >= 2) {
            ev.doc_logits = &doc_logits[i];
            ev.doc_tokens = corpus.documents[i];
          } else if (plan.include_prior && step == 0) {
            res.warnings.push_back("document " + std::to_string(i) + " has fewer than 2 tokens; prior term set to 0");
          }
          ev.query_logits = &evaluated[j].logits;
          ev.query_tokens = query;
          evidence.push_back(ev);
        }
        BayesianOptions options;
        options.include_prior = plan.include_prior;
        options.include_query = score_query;
        options.variant = plan.variant;
        options.preamble_logits = &p_logits;
        options.preamble_tokens = corpus.preamble;
        scores = bayesian_path_scores(evidence, options);
        break;
      }
      case SaliencyMetric::attention: {
        std::vector<double> mass;
        for (const auto& e : evaluated) mass.push_back(e.attention.at(1));
        scores = attention_path_scores(mass, backend_.supports_attention_summary());
        break;
      }
      case SaliencyMetric::none:
        scores.resize(pool.size());
        for (std::size_t j = 0; j < pool.size(); ++j) scores[j].path = j;
        assign_posteriors(scores);
        break;
    }
    for (auto& s : scores) s.path = pool[s.path];

    std::vector<std::size_t> kept;
    if (iterations == 1 && (plan.saliency == SaliencyMetric::none || !plan.flags.prune)) {
      kept = pool;
    } else if (plan.threshold) {
      kept = threshold_paths(scores, *plan.threshold);
    } else {
      kept = top_k_paths(scores, plan.top_k);
    }
    if (kept.empty()) throw Error(ErrorCode::no_paths_selected, "selector kept no paths");
    std::sort(kept.begin(), kept.end());

    std::vector<KVCacheHandle> parts{running};
    for (std::size_t a : kept) {
      const auto j = static_cast<std::size_t>(std::find(pool.begin(), pool.end(), a) - pool.begin());
      parts.push_back(doc_caches[a]);
      parts.push_back(evaluated[j].cache);
      running_tokens += corpus.documents[a].size() + query.size();
    }
    running = concat_caches(parts, ConcatMode::superposed);
    running_max = std::max(running_max, q_positions.back());
    std::erase_if(pool, [&](std::size_t i) { return std::binary_search(kept.begin(), kept.end(), i); });
    res.selected.insert(res.selected.end(), kept.begin(), kept.end());
    res.steps.push_back(std::move(kept));
    res.scores = std::move(scores);
  }

  const auto t_positions = arange_positions(running_max + 1.0, 1.0, postamble.size());
  auto t = backend_.extend(std::vector<KVCacheHandle>{running}, postamble, t_positions);
  transient.push_back(t.cache);
  res.ledger.stages.push_back({"postamble", {Branch{{{"t", postamble.size(), running_tokens, false}}}}});
  running_tokens += postamble.size();
  running = concat_caches(std::vector<KVCacheHandle>{running, t.cache});
  res.postamble_logits = std::move(t.logits);

  // Greedy decoding: pick, extend, append, stop on EOS or the token budget.
  std::vector<float> response_rows;
  std::vector<float> last(res.postamble_logits.row(res.postamble_logits.rows() - 1).begin(),
                          res.postamble_logits.row(res.postamble_logits.rows() - 1).end());
  double pos = t_positions.back() + 1.0;
  for (std::size_t step = 0; step < plan.max_new_tokens; ++step) {
    const TokenId token = argmax_token(last);
    res.response.push_back(token);
    res.response_positions.push_back(pos);
    const std::vector<TokenId> one{token};
    auto r = backend_.extend(std::vector<KVCacheHandle>{running}, one, PositionVector{pos});
    transient.push_back(r.cache);
    res.ledger.stages.push_back({"decode", {Branch{{{"r" + std::to_string(step), 1, running_tokens, false}}}}});
    running_tokens += 1;
    running = concat_caches(std::vector<KVCacheHandle>{running, r.cache});
    last.assign(r.logits.row(0).begin(), r.logits.row(0).end());
    response_rows.insert(response_rows.end(), last.begin(), last.end());
    pos += 1.0;
    if (token == plan.eos) break;
  }
  res.response_logits = LogitBlock(res.response.size(), backend_.shape().vocab, std::move(response_rows));

  for (const auto& h : transient) {
    try {
      backend_.release(h);
    } catch (const Error&) {
      // best effort
    }
  }
  const auto after = backend_.calls();
  res.calls = {after.extend - calls_before.extend, after.batch - calls_before.batch};
  res.cycles = compute_cycles(backend_.shape(), res.ledger);
  res.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return res;
}

}  // namespace superpose
