#pragma once

#include <random>
#include <vector>

#include "superpose/graph.hpp"

namespace fixtures {

inline std::vector<superpose::TokenId> random_tokens(std::mt19937_64& rng, std::size_t n,
                                                     superpose::TokenId lo = 1, superpose::TokenId hi = 255) {
  std::vector<superpose::TokenId> out(n);
  for (auto& t : out) t = lo + static_cast<superpose::TokenId>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  return out;
}

inline std::size_t between(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

template <typename T>
std::vector<T> concat(std::initializer_list<std::vector<T>> parts) {
  std::vector<T> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace fixtures
