#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dynens {

using Rng = std::mt19937_64;

/// Seed for the named sub-stream of `root` ("data", "init/expert/3", ...).
/// Streams with different names are independent of each other.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

inline Rng make_rng(std::uint64_t root, std::string_view stream) {
  return Rng(derive_seed(root, stream));
}

}  // namespace dynens
