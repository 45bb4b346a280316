#pragma once

#include <cstdint>
#include <random>

#include <ATen/core/Generator.h>

namespace pairgen {

// Seeded random stream shared by scalar draws and tensor sampling. Two
// instances built from the same seed produce identical sequences.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  double uniform();
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  // Integer in [lo, hi).
  int64_t randint(int64_t lo, int64_t hi);
  bool bernoulli(double p);

  // Fresh seed for a child stream.
  uint64_t next_seed();

  at::Generator& generator() { return generator_; }

 private:
  std::mt19937_64 engine_;
  at::Generator generator_;
};

}  // namespace pairgen
