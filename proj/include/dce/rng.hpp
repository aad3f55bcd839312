#pragma once

#include <cstdint>
#include <random>

namespace dce {

// Independent, reproducible stream for (seed, stream id). Used wherever a
// component needs per-restart or per-respondent randomness that must not
// shift when the number of restarts or respondents changes.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace dce
