#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace rsv {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream ids...). Same inputs give the same
// stream regardless of which thread or in which order it is created.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * stream.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto s : stream) push(s);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace rsv
