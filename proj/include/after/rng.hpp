#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace after {

// FNV-1a over bytes; used for rng stream tags, vocab fingerprints and the
// input-file hashes in run manifests.
std::uint64_t fnv1a64(std::string_view s);

// Deterministic RNG with named stream splitting. Every run owns one root
// Rng; components derive independent child streams by tag, so adding a new
// consumer never shifts the draws seen by existing ones. Distribution code
// (uniform, normal, shuffle) is hand-rolled on top of mt19937_64 because the
// standard distributions are not bit-reproducible across library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Child stream derived from (seed, tag); independent of draws made so far.
  Rng split(std::string_view tag) const;

  std::uint64_t next_u64();

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller (two uniforms per draw).
  double normal();

  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // True with probability p.
  bool bernoulli(double p);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace after
