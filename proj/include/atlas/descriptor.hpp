#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <string>

namespace atlas {

/// 256-bit binary feature descriptor stored as four 64-bit words.
struct Descriptor {
  std::array<std::uint64_t, 4> words{};

  bool operator==(const Descriptor&) const = default;

  bool bit(int i) const { return (words[i >> 6] >> (i & 63)) & 1u; }
  void set_bit(int i, bool v) {
    const std::uint64_t mask = std::uint64_t{1} << (i & 63);
    if (v)
      words[i >> 6] |= mask;
    else
      words[i >> 6] &= ~mask;
  }
  void flip_bit(int i) { words[i >> 6] ^= std::uint64_t{1} << (i & 63); }

  std::string to_hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (int w = 0; w < 4; ++w)
      for (int nib = 15; nib >= 0; --nib)
        out.push_back(digits[(words[w] >> (4 * nib)) & 0xf]);
    return out;
  }

  static Descriptor from_hex(const std::string& hex) {
    Descriptor d;
    for (int w = 0; w < 4; ++w)
      d.words[w] = std::stoull(hex.substr(16 * w, 16), nullptr, 16);
    return d;
  }
};

inline int hamming(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += std::popcount(a.words[i] ^ b.words[i]);
  return d;
}

// Total order for deterministic containers.
inline bool operator<(const Descriptor& a, const Descriptor& b) {
  return a.words < b.words;
}

}  // namespace atlas
