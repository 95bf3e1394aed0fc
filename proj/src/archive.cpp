#include "pyrad/archive.hpp"

#include <cstring>
#include <fstream>

#include "pyrad/error.hpp"
#include "pyrad/hash.hpp"

namespace pyrad {

namespace {

constexpr char kMagic[4] = {'F', 'P', 'W', 'A'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw LoadError(std::string("archive truncated while reading ") + what);
  return v;
}

nlohmann::json norm_to_json(const NormParams& n) {
  return {{"mean", {n.mean[0], n.mean[1], n.mean[2]}}, {"std", {n.std[0], n.std[1], n.std[2]}}};
}

NormParams norm_from_json(const nlohmann::json& j) {
  NormParams n;
  for (int c = 0; c < 3; ++c) {
    n.mean[static_cast<size_t>(c)] = j.at("mean").at(static_cast<size_t>(c)).get<float>();
    n.std[static_cast<size_t>(c)] = j.at("std").at(static_cast<size_t>(c)).get<float>();
  }
  return n;
}

}  // namespace

void Archive::save(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");

  os.write(kMagic, 4);
  write_pod<uint32_t>(os, kVersion);

  const nlohmann::json mj = {
      {"kind", meta.kind.empty() ? "teacher" : meta.kind},
      {"arch", meta.arch_id},
      {"input_size", meta.input_size},
      {"norm", norm_to_json(meta.norm)},
      {"extra", meta.extra.is_null() ? nlohmann::json::object() : meta.extra}};
  const std::string meta_str = mj.dump();
  write_pod<uint64_t>(os, meta_str.size());
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  write_pod<uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_pod<int64_t>(os, d);
    write_pod<uint64_t>(os, t.data.size() * sizeof(float));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!os) throw IoError("write failed for " + file.string());
}

Archive Archive::load(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw LoadError("cannot open archive " + file.string());

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw LoadError(file.string() + " is not a weights archive (bad magic)");
  const auto version = read_pod<uint32_t>(is, "version");
  if (version != kVersion)
    throw LoadError("unsupported archive version " + std::to_string(version));

  const auto meta_len = read_pod<uint64_t>(is, "metadata length");
  std::string meta_str(meta_len, '\0');
  is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw LoadError("archive truncated while reading metadata");

  Archive a;
  try {
    const nlohmann::json meta = nlohmann::json::parse(meta_str);
    a.meta.kind = meta.value("kind", "teacher");
    a.meta.arch_id = meta.at("arch").get<std::string>();
    a.meta.input_size = meta.at("input_size").get<int>();
    a.meta.norm = norm_from_json(meta.at("norm"));
    a.meta.extra = meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad archive metadata: ") + e.what());
  }

  const auto count = read_pod<uint64_t>(is, "tensor count");
  a.tensors.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(is, "tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw LoadError("archive truncated while reading tensor name");
    const auto ndim = read_pod<uint32_t>(is, ("shape of '" + name + "'").c_str());
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_pod<int64_t>(is, "dimension"));
    const auto byte_len = read_pod<uint64_t>(is, ("data length of '" + name + "'").c_str());
    Tensor t(shape);
    if (byte_len != t.data.size() * sizeof(float))
      throw LoadError("tensor '" + name + "': payload size " + std::to_string(byte_len) +
                      " does not match shape " + t.shape_str());
    is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(byte_len));
    if (!is) throw LoadError("archive truncated inside tensor '" + name + "'");
    a.tensors.emplace_back(std::move(name), std::move(t));
  }
  return a;
}

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::string Archive::fingerprint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw LoadError("cannot open " + file.string());
  Fnv64 h;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(is.gcount()));
  }
  return h.hex();
}

}  // namespace pyrad
