#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stlt {

struct TaskSample {
  std::vector<int> tokens;
  std::vector<int> targets;
};

// Delayed copy: targets[i] = tokens[i - delay] (0 for the first `delay`
// positions, which is itself learnable from position alone).
TaskSample gen_copy_task(std::uint64_t seed, std::size_t n, std::size_t vocab,
                         std::size_t delay);

// Next-token prediction on a noisy periodic stream: a random pattern of
// length `period` repeats; each observed token is independently corrupted
// with probability noise_prob, targets are the clean next pattern value.
// Recovering them requires reading tokens at lags that are multiples of the
// period. Requires 2 <= period <= n.
TaskSample gen_oscillatory_recall(std::uint64_t seed, std::size_t n,
                                  std::size_t period, std::size_t vocab = 16,
                                  double noise_prob = 0.1);

std::uint64_t dataset_hash(const TaskSample& s);

struct CharCorpus {
  std::vector<std::uint8_t> bytes;
};

CharCorpus load_corpus(const std::string& path);

// Random window of n+1 bytes -> (tokens, next-byte targets).
TaskSample sample_char_lm(const CharCorpus& corpus, std::uint64_t seed,
                          std::size_t n);

}  // namespace stlt
