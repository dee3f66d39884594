#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace goodlab {

// Named random streams.
//
// Every stochastic site in the library draws from its own engine whose seed is
// derived from (run seed, site label) with SplitMix64 over an FNV-1a hash of
// the label. Adding a new site never perturbs the draws of existing sites, and
// the same (seed, label) always reproduces the same sequence.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view label);

  // Child stream, e.g. rng.child("epoch-3").
  Rng child(std::string_view label) const;

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  std::uint64_t poisson(double mean);
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  // Uniform sample of k distinct indices from [0, n), returned in ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t stream_seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace goodlab
