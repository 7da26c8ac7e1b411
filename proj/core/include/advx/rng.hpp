#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace advx {

using Rng = std::mt19937_64;

/// Independent generator derived from a base seed and a list of tags
/// (stream id, fold index, ...). Distinct tag lists give unrelated streams.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream tags. The adversary stream is the only source of randomness for
// adversarial and attacker heads, so runs with every lambda at zero consume
// exactly the same model/data draws as a plain MultVAE run.
inline constexpr std::uint64_t kModelStream = 1;
inline constexpr std::uint64_t kDataStream = 2;
inline constexpr std::uint64_t kAdversaryStream = 3;
inline constexpr std::uint64_t kAttackerStream = 4;

}  // namespace advx
