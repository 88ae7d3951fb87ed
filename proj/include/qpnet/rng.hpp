#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qpnet::rng {

// splitmix64 finalizer; decorrelates structured seed inputs.
constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Derives an independent stream seed from a base seed, a purpose tag and up
// to two structural indices. Same inputs always give the same stream.
inline uint64_t derive(uint64_t base, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
  uint64_t h = splitmix64(base ^ fnv1a(tag));
  h = splitmix64(h ^ (a * 0x9e3779b97f4a7c15ull));
  h = splitmix64(h ^ (b * 0xc2b2ae3d27d4eb4full));
  return h;
}

inline std::mt19937_64 make(uint64_t base, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
  return std::mt19937_64(derive(base, tag, a, b));
}

// Uniform in [0,1) from the top 53 bits; identical on every platform for a
// given engine state (unlike std::uniform_real_distribution).
inline double canonical(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * canonical(g);
}

}  // namespace qpnet::rng
