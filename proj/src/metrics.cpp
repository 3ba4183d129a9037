#include "superpose/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace superpose {

namespace {

std::vector<std::string> words(std::string_view normalized) {
  std::vector<std::string> out;
  std::istringstream in{std::string(normalized)};
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& w : gold) ++counts[w];
  int common = 0;
  for (const auto& w : pred) {
    if (auto it = counts.find(w); it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string stripped;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    stripped.push_back(static_cast<char>(std::tolower(c)));
  }
  std::string out;
  for (const auto& w : words(stripped)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

int best_em_subspan(std::string_view response, std::span<const std::string> golds) {
  const std::string hay = " " + normalize_answer(response) + " ";
  for (const auto& g : golds) {
    if (hay.find(" " + normalize_answer(g) + " ") != std::string::npos) return 1;
  }
  return 0;
}

AnswerScore answer_em_f1(std::string_view response, std::span<const std::string> golds) {
  const auto pred = normalize_answer(response);
  const auto pred_words = words(pred);
  AnswerScore best;
  for (const auto& g : golds) {
    const auto gold = normalize_answer(g);
    if (gold == pred) best.em = 1;
    best.f1 = std::max(best.f1, token_f1(pred_words, words(gold)));
  }
  return best;
}

}  // namespace superpose
