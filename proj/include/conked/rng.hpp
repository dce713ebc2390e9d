#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace conked {

using Rng = std::mt19937_64;

// Every random component draws from its own named sub-stream of one 64-bit
// seed, so e.g. RANSAC can be re-seeded without perturbing augmentation.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index);

Rng make_rng(std::uint64_t seed, std::string_view stream);
Rng make_rng(std::uint64_t seed, std::string_view stream, std::uint64_t index);

double uniform(Rng& rng, double lo, double hi);
double normal(Rng& rng, double mean, double stddev);

// Uniform integer in [0, n); n must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

}  // namespace conked
