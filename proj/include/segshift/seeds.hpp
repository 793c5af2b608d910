#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace segshift {

using Rng = std::mt19937_64;

/// Derives an independent seed for a labelled random stream from the master seed.
///
/// Every consumer of randomness (data synthesis, latent sampling, shifts,
/// interpolation draws, weight initialization, ...) gets its own label, and
/// per-step streams additionally fold in the step index. Streams therefore do
/// not depend on the order in which other streams are consumed, which is what
/// makes checkpoint/resume bit-reproducible.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
  return Rng(derive_seed(master, label, index));
}

}  // namespace segshift
