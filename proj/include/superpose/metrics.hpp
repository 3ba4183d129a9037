#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace superpose {

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

/// 1 when some normalized gold appears in the normalized response as a run of
/// whole words.
int best_em_subspan(std::string_view response, std::span<const std::string> golds);

struct AnswerScore {
  int em = 0;
  double f1 = 0.0;
};

/// EM against any gold; F1 is the best token-overlap F1 over golds.
AnswerScore answer_em_f1(std::string_view response, std::span<const std::string> golds);

}  // namespace superpose
