#include "pairgen/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace pairgen {

Rng::Rng(uint64_t seed)
    : engine_(seed), generator_(at::make_generator<at::CPUGeneratorImpl>(seed ^ 0x9e3779b97f4a7c15ULL)) {}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double Rng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double Rng::normal(double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(engine_);
}

int64_t Rng::randint(int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi - 1)(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

uint64_t Rng::next_seed() { return engine_(); }

}  // namespace pairgen
