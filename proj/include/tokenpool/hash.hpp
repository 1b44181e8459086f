#pragma once

#include <cstdint>
#include <span>

namespace tokenpool {

using TokenId = std::uint32_t;

// Seed-free FNV-1a over little-endian token bytes. Segment keys are the
// running hash of every token from the prefix root through the segment's
// last token, so equal token chains always produce equal keys.
inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a_byte(std::uint64_t h, std::uint8_t b) {
  h ^= b;
  h *= kFnvPrime;
  return h;
}

inline std::uint64_t fnv1a_token(std::uint64_t h, TokenId t) {
  h = fnv1a_byte(h, static_cast<std::uint8_t>(t & 0xff));
  h = fnv1a_byte(h, static_cast<std::uint8_t>((t >> 8) & 0xff));
  h = fnv1a_byte(h, static_cast<std::uint8_t>((t >> 16) & 0xff));
  h = fnv1a_byte(h, static_cast<std::uint8_t>((t >> 24) & 0xff));
  return h;
}

inline std::uint64_t fnv1a_tokens(std::span<const TokenId> tokens,
                                  std::uint64_t h = kFnvOffsetBasis) {
  for (TokenId t : tokens) h = fnv1a_token(h, t);
  return h;
}

// splitmix64 finalizer, used wherever a well-mixed value is needed from a
// structured id (synthetic token streams, per-doc length draws).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace tokenpool
