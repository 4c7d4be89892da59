#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace taco {

// splitmix64 finalizer; used to derive independent stream seeds so that
// per-sample work is reproducible regardless of worker count.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Thin wrapper over mt19937_64 with the handful of draws the project needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed), base_(seed) {}

  // Derived generator for an independent stream (worker, sample, view...).
  // Based on the construction seed, not the current engine state.
  Rng fork(std::uint64_t stream) const { return Rng(mix_seed(base_, stream)); }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  // Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n) {
    return std::uniform_int_distribution<std::int64_t>(0, n - 1)(eng_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(eng_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Uniform permutation of {0,...,n-1}.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

  // k distinct indices from [0, n), sorted ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::uint64_t base_;
};

}  // namespace taco
