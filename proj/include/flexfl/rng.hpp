#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace flexfl {

using Rng = std::mt19937_64;

/// Builds an independent generator from a base seed and a list of stream tags
/// (component id, round, device id, ...). Identical inputs give identical streams.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

/// Derives a 64-bit child seed; used where a seed (not a generator) has to be stored.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  Rng rng = make_rng(seed, tags);
  return rng();
}

// Stream tags. Values are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t kCorpus = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kProxy = 3;
inline constexpr std::uint64_t kPretrainInit = 4;
inline constexpr std::uint64_t kPretrainShuffle = 5;
inline constexpr std::uint64_t kReset = 6;
inline constexpr std::uint64_t kPopulation = 7;
inline constexpr std::uint64_t kSelection = 8;
inline constexpr std::uint64_t kDevice = 9;
inline constexpr std::uint64_t kLocalTrain = 10;
}  // namespace stream

}  // namespace flexfl
