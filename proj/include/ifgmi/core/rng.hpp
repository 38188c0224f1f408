#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace ifgmi {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size()), h);
}

/// Child seed for a labelled stage ("corpus", "train/target", ...), so every
/// stage can be re-run on its own from the master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
  return splitmix64(fnv1a64(label, splitmix64(master)) ^ splitmix64(index + 0x51ed270b27ULL));
}

template <class T>
T normal(Rng& rng, T mean = T(0), T stddev = T(1)) {
  return std::normal_distribution<T>(mean, stddev)(rng);
}

template <class T>
T uniform(Rng& rng, T lo, T hi) {
  return std::uniform_real_distribution<T>(lo, hi)(rng);
}

}  // namespace ifgmi
