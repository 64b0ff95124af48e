#pragma once

#include <cstdint>
#include <limits>

namespace vibi {

namespace detail {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based generator: draw n of a stream is mix64(key + (n + 1) * golden),
/// the SplitMix64 sequence for `key`. Children are keyed by hashing
/// (parent key, child id), so a sample is addressable by a path such as
/// (seed, epoch, batch, instance) without replaying earlier draws.
///
/// Satisfies UniformRandomBitGenerator. Not shareable across threads; derive a
/// child per worker instead.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), key_(detail::mix64(seed ^ 0x5eedULL)) {}

  RngStream child(std::uint64_t id) const {
    RngStream c(seed_);
    c.key_ = detail::mix64(key_ ^ detail::mix64(id + detail::kGolden));
    return c;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return detail::mix64(key_ + (++counter_) * detail::kGolden); }

  /// Uniform double in the open interval (0, 1); exact zeros are redrawn.
  double uniform_open() {
    for (;;) {
      const double u = static_cast<double>((*this)() >> 11) * 0x1.0p-53;
      if (u > 0.0) {
        return u;
      }
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace vibi
