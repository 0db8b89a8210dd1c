#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace strider {

/// Seed of a named stream derived from a run seed, so that e.g. the mask
/// stream can change without disturbing the split stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) noexcept;

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

}  // namespace strider
