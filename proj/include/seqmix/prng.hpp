#pragma once

#include <cstdint>
#include <string_view>

namespace seqmix {

// Counter-based deterministic generator. The stream is the SplitMix64
// sequence out_k = fin(seed + k * GOLDEN) where fin is the SplitMix64
// finalizer; state is just (seed, counter). Integer-only, so identical
// seeds give identical streams on every platform.
class Prng {
 public:
  explicit Prng(uint64_t seed = 0) : seed_(seed) {}

  uint64_t next_u64() {
    counter_ += 1;
    return fin(seed_ + counter_ * GOLDEN);
  }

  // 53-bit mantissa draw in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // 24-bit draw in [0, 1), exactly representable as float.
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool bernoulli(double p) { return next_double() < p; }

  // Multiply-shift range reduction; bias is O(n / 2^64).
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Independent child stream for a named purpose. Children of distinct
  // (purpose, index) pairs never collide with the parent stream.
  Prng derive(std::string_view purpose, uint64_t index = 0) const {
    return Prng(fin(fin(seed_ ^ fnv1a(purpose)) + index * GOLDEN + 0x632BE59BD9B4E019ull));
  }

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }

 private:
  static constexpr uint64_t GOLDEN = 0x9E3779B97F4A7C15ull;

  static uint64_t fin(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ull;
    }
    return h;
  }

  uint64_t seed_;
  uint64_t counter_ = 0;
};

}  // namespace seqmix
