#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace celldet {

using Rng = std::mt19937_64;

/// Derives an independent child seed from a root seed and a component tag,
/// so every consumer of randomness can be reseeded from one root value.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t root, std::string_view tag, std::uint64_t index = 0) {
    return Rng(derive_seed(root, tag, index));
}

}  // namespace celldet
