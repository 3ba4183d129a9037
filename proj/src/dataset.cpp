#include "superpose/dataset.hpp"

#include <fstream>

#include "superpose/error.hpp"

namespace superpose {

namespace {

std::string require_string(const nlohmann::json& obj, const char* field, std::size_t line) {
  if (!obj.contains(field)) {
    throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": missing field '" + field + "'");
  }
  if (!obj[field].is_string()) {
    throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": field '" + field + "' must be a string");
  }
  return obj[field].get<std::string>();
}

RagExample parse_line(const nlohmann::json& obj, std::size_t line) {
  if (!obj.is_object()) throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": not an object");
  RagExample ex;
  ex.question = require_string(obj, "question", line);
  if (!obj.contains("answers")) {
    throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": missing field 'answers'");
  }
  const auto& answers = obj["answers"];
  if (!answers.is_array() || answers.empty()) {
    throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": 'answers' must be a non-empty array");
  }
  for (const auto& a : answers) {
    if (!a.is_string()) throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": answers must be strings");
    ex.answers.push_back(a.get<std::string>());
  }
  if (!obj.contains("ctxs")) {
    throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": missing field 'ctxs'");
  }
  const auto& ctxs = obj["ctxs"];
  if (!ctxs.is_array() || ctxs.empty()) {
    throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": 'ctxs' must be a non-empty array");
  }
  for (const auto& c : ctxs) {
    if (!c.is_object()) throw Error(ErrorCode::schema_error, "line " + std::to_string(line) + ": ctxs entries must be objects");
    Context ctx;
    ctx.title = c.contains("title") && c["title"].is_string() ? c["title"].get<std::string>() : std::string();
    ctx.text = require_string(c, "text", line);
    for (const char* flag : {"has_answer", "is_supporting", "gold"}) {
      if (c.contains(flag) && c[flag].is_boolean()) ctx.gold = c[flag].get<bool>();
    }
    ex.contexts.push_back(std::move(ctx));
  }
  return ex;
}

}  // namespace

std::vector<RagExample> parse_examples(std::istream& in, std::uint64_t seed) {
  std::vector<RagExample> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::parse_error, "line " + std::to_string(line) + ": " + e.what());
    }
    auto ex = parse_line(obj, line);
    seeded_shuffle(ex.contexts, seed ^ (0x9e3779b97f4a7c15ULL * (out.size() + 1)));
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<RagExample> ingest(const std::filesystem::path& path, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  return parse_examples(in, seed);
}

PromptTemplate default_template() {
  PromptTemplate t;
  t.preamble =
      "Below is an instruction that describes a task, paired with an input that provides further "
      "context. Write a response that appropriately completes the request.\n\n"
      "### Instruction:\nWrite a high-quality answer for the given question using only the provided "
      "search results (some of which might be irrelevant).\n\n### Input:\n";
  t.document = "[Document](Title: {title}) {text}\n";
  t.query = "\nQuestion: {question}\n";
  t.postamble = "\n### Response:\n";
  return t;
}

PromptTemplate template_from_json(const nlohmann::json& doc) {
  try {
    return {doc.at("preamble").get<std::string>(), doc.at("document").get<std::string>(),
            doc.at("query").get<std::string>(), doc.at("postamble").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_error, std::string("template: ") + e.what());
  }
}

nlohmann::json to_json(const PromptTemplate& t) {
  return {{"preamble", t.preamble}, {"document", t.document}, {"query", t.query}, {"postamble", t.postamble}};
}

namespace {

std::string substitute(std::string pattern, std::string_view name, std::string_view value) {
  const std::string token = "{" + std::string(name) + "}";
  for (auto at = pattern.find(token); at != std::string::npos; at = pattern.find(token, at + value.size())) {
    pattern.replace(at, token.size(), value);
  }
  return pattern;
}

}  // namespace

RenderedPrompt render_prompt(const PromptTemplate& tmpl, const RagExample& ex) {
  RenderedPrompt out;
  out.preamble = tmpl.preamble;
  for (const auto& c : ex.contexts) {
    out.documents.push_back(substitute(substitute(tmpl.document, "title", c.title), "text", c.text));
  }
  out.query = substitute(tmpl.query, "question", ex.question);
  out.postamble = tmpl.postamble;
  return out;
}

std::vector<TokenId> encode_bytes(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  return out;
}

std::string decode_bytes(std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId t : tokens) {
    if (t == kEosToken) break;
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

}  // namespace superpose
