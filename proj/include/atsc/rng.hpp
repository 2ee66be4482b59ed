#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace atsc {

using Engine = std::mt19937_64;

// FNV-1a; stable across platforms, used for stream tags and fingerprints.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n,
                           std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t tag_hash(std::string_view tag) { return fnv1a(tag.data(), tag.size()); }

/// Engine for an independent random stream identified by (seed, tag, indices...).
/// Streams never depend on how many draws other streams consumed.
inline Engine make_engine(std::uint64_t seed, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {}) {
  std::vector<std::uint32_t> words;
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  push(tag_hash(tag));
  for (auto i : indices) push(i);
  std::seed_seq seq(words.begin(), words.end());
  return Engine(seq);
}

}  // namespace atsc
