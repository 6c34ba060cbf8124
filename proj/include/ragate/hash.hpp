#pragma once

// Stable hashing used for cache keys, prompt keys and seeded RNG streams.

#include <cstdint>
#include <string>
#include <string_view>

namespace ragate {

/// Hex-encoded SHA-256 of `data`. Stable across platforms and runs.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a. Used only to derive RNG streams, never for storage keys.
std::uint64_t fnv1a64(std::string_view data);

/// splitmix64 step; decorrelates seeds built from small integers.
std::uint64_t splitmix64(std::uint64_t x);

/// Uniform double in [0,1) from a 64-bit word (53-bit mantissa path).
inline double to_unit_interval(std::uint64_t w) {
  return static_cast<double>(w >> 11) * 0x1.0p-53;
}

}  // namespace ragate
