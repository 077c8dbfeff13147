#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rscavity {

using Rng = std::mt19937_64;

/// Mixes a 64-bit value (SplitMix64 finalizer).
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent, reproducible stream from a root seed and a path of
/// indices, e.g. make_stream(seed, {zeta_index, replicate}). Streams for
/// distinct paths do not overlap in practice and do not depend on the order
/// in which they are created.
Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {});

double standard_normal(Rng& rng);
double standard_exponential(Rng& rng);
double uniform01(Rng& rng);

}  // namespace rscavity
