#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace marcel {

// FNV-1a 64-bit. Platform-stable: fingerprint bits and config hashes written
// by one build must match any other build.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ULL) {
  uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Order-sensitive combiner for integer sequences (splitmix-style finalizer per word).
inline uint64_t hash_combine(uint64_t h, uint64_t v) {
  v += 0x9e3779b97f4a7c15ULL;
  v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ULL;
  v = (v ^ (v >> 27)) * 0x94d049bb133111ebULL;
  v ^= v >> 31;
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

inline uint64_t hash_u64_span(const std::vector<uint64_t>& words, uint64_t seed = 0) {
  uint64_t h = seed;
  for (uint64_t w : words) h = hash_combine(h, w);
  return h;
}

}  // namespace marcel
