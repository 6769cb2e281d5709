#include "stlt/tasks.hpp"

#include <fstream>
#include <stdexcept>

#include "stlt/rng.hpp"

namespace stlt {

TaskSample gen_copy_task(std::uint64_t seed, std::size_t n, std::size_t vocab,
                         std::size_t delay) {
  if (n < 1 || vocab < 2) throw std::invalid_argument("gen_copy_task: bad sizes");
  if (delay >= n) throw std::invalid_argument("gen_copy_task: delay must be < n");
  Rng rng(substream(seed, 0x636f7079));
  TaskSample s;
  s.tokens.resize(n);
  s.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    s.tokens[i] = static_cast<int>(rng.next_u64() % vocab);
  for (std::size_t i = 0; i < n; ++i)
    s.targets[i] = i < delay ? 0 : s.tokens[i - delay];
  return s;
}

TaskSample gen_oscillatory_recall(std::uint64_t seed, std::size_t n,
                                  std::size_t period, std::size_t vocab,
                                  double noise_prob) {
  if (period < 2) throw std::invalid_argument("gen_oscillatory_recall: period must be >= 2");
  if (period > n)
    throw std::invalid_argument("gen_oscillatory_recall: period exceeds sequence length");
  Rng rng(substream(seed, 0x6f736369));
  std::vector<int> pattern(period);
  for (int& p : pattern) p = static_cast<int>(rng.next_u64() % vocab);
  TaskSample s;
  s.tokens.resize(n);
  s.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int tok = pattern[i % period];
    if (rng.uniform() < noise_prob) tok = static_cast<int>(rng.next_u64() % vocab);
    s.tokens[i] = tok;
    s.targets[i] = pattern[(i + 1) % period];
  }
  return s;
}

std::uint64_t dataset_hash(const TaskSample& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t x) {
    h ^= x;
    h *= 0x100000001b3ULL;
  };
  mix(s.tokens.size());
  for (int t : s.tokens) mix(static_cast<std::uint64_t>(t) + 1);
  mix(s.targets.size());
  for (int t : s.targets) mix(static_cast<std::uint64_t>(t) + 1);
  return h;
}

CharCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
  CharCorpus c;
  c.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (c.bytes.size() < 2)
    throw std::runtime_error("load_corpus: corpus too small: " + path);
  return c;
}

TaskSample sample_char_lm(const CharCorpus& corpus, std::uint64_t seed,
                          std::size_t n) {
  if (corpus.bytes.size() < n + 1)
    throw std::invalid_argument("sample_char_lm: corpus shorter than context");
  Rng rng(substream(seed, 0x6368));
  const std::size_t start = rng.next_u64() % (corpus.bytes.size() - n);
  TaskSample s;
  s.tokens.resize(n);
  s.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.tokens[i] = corpus.bytes[start + i];
    s.targets[i] = corpus.bytes[start + i + 1];
  }
  return s;
}

}  // namespace stlt
