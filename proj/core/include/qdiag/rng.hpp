#pragma once

// Bit-portable PRNG used everywhere in qdiag.
//
// Engine: SplitMix64 (public-domain). One 64-bit state word, one mix per
// draw, identical output on every platform.  std::mt19937 would also be
// portable, but the std distributions on top of it are not (libstdc++ and
// libc++ disagree), so the few distributions we need are spelled out here.
//
// Stream splitting convention: a child stream for purpose `label` under a
// parent seed is
//     Rng(parent_seed ^ fnv1a64(label))
// i.e. the label is hashed with FNV-1a and XORed into the parent seed.
// All derived seeds in this codebase (per-env seeds in the default suite,
// per-cell seeds in sweeps, init/sampling streams inside a run) go through
// Rng::stream so the derivation is uniform and documented in one place.
// Splitting uses the seed the Rng was constructed with, not the advancing
// state, so it is independent of how many draws have happened.

#include <cmath>
#include <cstdint>
#include <string_view>

namespace qdiag {

constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// The one seed-derivation rule (see header comment).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return seed ^ fnv1a64(label);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  // Child stream for a named purpose; see header comment.
  Rng stream(std::string_view label) const { return Rng(derive_seed(seed_, label)); }
  static Rng stream(std::uint64_t seed, std::string_view label) {
    return Rng(derive_seed(seed, label));
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1): top 53 bits, so every value is exactly representable.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0. Rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  int index(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

  // Standard normal via Box-Muller (second member of each pair is cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace qdiag
