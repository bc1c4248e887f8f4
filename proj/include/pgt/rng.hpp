#pragma once

#include <cstdint>
#include <random>

namespace pgt {

using Rng = std::mt19937_64;

/// Independent stream derived from (seed, stream ids...).
template <typename... Ids>
Rng make_rng(std::uint64_t seed, Ids... ids) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(ids)...};
  return Rng(seq);
}

}  // namespace pgt
