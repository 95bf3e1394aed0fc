#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace pyrad {

// FNV-1a 64-bit. Used for parameter checksums and config fingerprints;
// not cryptographic.
struct Fnv64 {
  uint64_t state = 0xcbf29ce484222325ull;

  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 0x100000001b3ull;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }

  uint64_t value() const { return state; }
  std::string hex() const;
};

std::string to_hex(uint64_t v);

}  // namespace pyrad
