#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace repmet {

/// Seedable, splittable pseudo-random generator.
///
/// Algorithm: xoshiro256** whose 256-bit state is filled by four SplitMix64
/// outputs of the seed. Child streams are derived from the *seed key*, not the
/// current state, so `split("episodes")` gives the same stream regardless of how
/// many numbers the parent has already produced. All distributions below are
/// implemented here (not via <random> distributions) so the produced sequences
/// are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Stream for a named subsystem, derived from this generator's seed key.
  Rng split(std::string_view name) const;
  /// Stream for the `index`-th item of a named family (e.g. episode 17).
  Rng split(std::string_view name, std::uint64_t index) const;

  std::uint64_t seed_key() const noexcept { return key_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n);
  /// Standard normal (Box-Muller, second variate cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  /// k distinct values from [0, n), in draw order. Requires k <= n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t key_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
/// FNV-1a over bytes; used to turn subsystem names into seed material.
std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 14695981039346656037ULL);

}  // namespace repmet
