#pragma once

#include <cmath>
#include <cstdint>

namespace stlt {

// Counter-based splitmix64 stream. State is (seed, call count), so a stream
// can be checkpointed and replayed exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    ++calls_;
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1), safe under log()
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Standard Gumbel(0,1) via inverse CDF.
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  std::uint64_t calls() const { return calls_; }

  void skip_to(std::uint64_t calls) {
    while (calls_ < calls) next_u64();
  }

 private:
  std::uint64_t state_;
  std::uint64_t calls_ = 0;
};

// Derives an independent stream seed from a base seed plus up to three tags.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a,
                               std::uint64_t b = 0, std::uint64_t c = 0) {
  Rng r(seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ ((b + 1) * 0xc2b2ae3d27d4eb4fULL) ^
        ((c + 1) * 0x165667b19e3779f9ULL));
  return r.next_u64();
}

}  // namespace stlt
