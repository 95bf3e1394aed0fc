#include "pyrad/hash.hpp"

namespace pyrad {

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string Fnv64::hex() const { return to_hex(state); }

}  // namespace pyrad
