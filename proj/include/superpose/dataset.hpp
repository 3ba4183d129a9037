#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "superpose/graph.hpp"

namespace superpose {

struct Context {
  std::string title;
  std::string text;
  std::optional<bool> gold;  ///< from "has_answer" / "is_supporting" when present
};

struct RagExample {
  std::string question;
  std::vector<std::string> answers;
  std::vector<Context> contexts;
};

/// JSON Lines with question, answers, ctxs[{title, text}]. Context order is
/// shuffled per example with a generator seeded from (seed, example index).
std::vector<RagExample> parse_examples(std::istream& in, std::uint64_t seed);
std::vector<RagExample> ingest(const std::filesystem::path& path, std::uint64_t seed);

/// Portable Fisher-Yates over a 64-bit Mersenne Twister.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    // Unbiased draw from [0, i) by rejection; uniform_int_distribution is not portable.
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::mt19937_64::max() - (std::mt19937_64::max() % bound + 1) % bound;
    std::uint64_t r = rng();
    while (r > limit) r = rng();
    std::swap(items[i - 1], items[r % bound]);
  }
}

/// Text pieces of a prompt. "{title}", "{text}" and "{question}" are substituted.
struct PromptTemplate {
  std::string preamble;
  std::string document;
  std::string query;
  std::string postamble;
};

PromptTemplate default_template();
PromptTemplate template_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const PromptTemplate& tmpl);

struct RenderedPrompt {
  std::string preamble;
  std::vector<std::string> documents;
  std::string query;
  std::string postamble;
};

RenderedPrompt render_prompt(const PromptTemplate& tmpl, const RagExample& example);

/// Byte-level tokenizer matching the reference vocabulary; token 0 is EOS.
inline constexpr TokenId kEosToken = 0;
std::vector<TokenId> encode_bytes(std::string_view text);
/// Stops at the first EOS.
std::string decode_bytes(std::span<const TokenId> tokens);

}  // namespace superpose
