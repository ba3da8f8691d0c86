#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace icanet {

/// Seeded generator with platform-independent real-valued draws.
///
/// std::uniform_real_distribution and friends are implementation-defined, so
/// the conversions from raw 32-bit words are done here to keep every draw
/// bit-reproducible across standard libraries.
class Rng {
 public:
  using engine_type = std::mt19937;

  explicit Rng(std::uint32_t seed = 0) : engine_(seed) {}

  /// Seeds from an arbitrary list of words through std::seed_seq.
  explicit Rng(std::initializer_list<std::uint32_t> words) {
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  std::uint32_t next_u32() { return static_cast<std::uint32_t>(engine_()); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() {
    const std::uint64_t hi = next_u32() >> 5;  // 27 bits
    const std::uint64_t lo = next_u32() >> 6;  // 26 bits
    return double((hi << 26) | lo) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is discarded so the
  /// stream position depends only on the number of calls.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n) by rejection.
  std::uint32_t below(std::uint32_t n) {
    const std::uint32_t limit = static_cast<std::uint32_t>((std::uint64_t(1) << 32) / n * n - 1);
    for (;;) {
      const std::uint32_t r = next_u32();
      if (r <= limit || limit == 0xFFFFFFFFu) return r % n;
    }
  }

  engine_type& engine() { return engine_; }
  const engine_type& engine() const { return engine_; }

 private:
  engine_type engine_;
};

/// FNV-1a over a name; used to give every parameter its own seed stream.
inline std::uint32_t name_hash(std::string_view name) {
  std::uint32_t h = 2166136261u;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 16777619u;
  }
  return h;
}

/// Fisher-Yates shuffle driven by Rng::below.
template <typename V>
void shuffle(std::vector<V>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace icanet
