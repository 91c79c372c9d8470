#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dit {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a key tuple into one 64-bit seed. Order matters.
constexpr std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// Stream tags so that different consumers of one seed never collide.
enum class Stream : std::uint64_t {
  kInit = 1,
  kData = 2,
  kTrainStep = 3,
  kSampleInit = 4,
  kSampleStep = 5,
  kExtractor = 6,
  kFixture = 7,
  kCalibration = 8,
};

/// A generator whose stream is fully determined by a key tuple, so results
/// never depend on evaluation order or on how work is split across threads.
class KeyedRng {
 public:
  explicit KeyedRng(std::uint64_t key) : engine_(key) {}
  KeyedRng(std::initializer_list<std::uint64_t> parts) : engine_(derive_key(parts)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dit
