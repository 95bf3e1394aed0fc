#include "pyrad/npy.hpp"

#include <cstdint>
#include <fstream>
#include <string>

#include "pyrad/error.hpp"

namespace pyrad {

void write_npy(const std::filesystem::path& file, const Tensor& t) {
  std::string shape = "(";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    shape += std::to_string(t.shape[i]);
    if (t.shape.size() == 1 || i + 1 < t.shape.size()) shape += ", ";
  }
  shape += ")";
  std::string header =
      "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
  // Pad so that magic + version + length field + header is a multiple of 64.
  const std::size_t base = 6 + 2 + 2;
  std::size_t total = base + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';

  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot open " + file.string() + " for writing");
  out.write("\x93NUMPY", 6);
  out.put('\x01');
  out.put('\x00');
  const uint16_t len = static_cast<uint16_t>(header.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  out.close();
  if (!out) throw IoError("failed writing " + file.string());
}

}  // namespace pyrad
