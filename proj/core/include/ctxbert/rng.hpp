#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace ctxbert {

// SplitMix64 finalizer; also used as the keyed hash for seeded lookup tables.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL));
}

// 64-bit FNV-1a, used for stream names and file checksums.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

// Named random streams. Every consumer of randomness draws from its own stream
// so that, e.g., changing the dropout rate never perturbs the masking sequence.
namespace streams {
inline constexpr std::uint64_t kDataGen = fnv1a64("data-gen");
inline constexpr std::uint64_t kDataTables = fnv1a64("data-tables");
inline constexpr std::uint64_t kSplit = fnv1a64("split");
inline constexpr std::uint64_t kMasking = fnv1a64("masking");
inline constexpr std::uint64_t kShuffle = fnv1a64("shuffle");
inline constexpr std::uint64_t kDropout = fnv1a64("dropout");
inline constexpr std::uint64_t kInit = fnv1a64("init");
}  // namespace streams

// Counter-based generator: draw k of stream (seed, stream) is a pure function
// of (seed, stream, k). All distributions are implemented here rather than with
// <random> so that sequences are identical across standard libraries.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) noexcept
      : seed_(seed), stream_(stream), key_(mix64(seed, stream)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept { return mix64(key_ ^ mix64(counter_++)); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer on [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;

  double normal() noexcept;

  // Normal(0, stddev) truncated to +-2 stddev.
  double truncated_normal(double stddev) noexcept;

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Index drawn from an unnormalized non-negative weight vector.
  std::size_t categorical(std::span<const double> weights) noexcept;

  // Derived generator for shard/worker `index`, independent of this one's counter.
  Rng fork(std::uint64_t index) const noexcept { return Rng(seed_, mix64(stream_, index)); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ctxbert
