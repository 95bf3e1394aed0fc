#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pyrad/tensor.hpp"

#include "json.hpp"

namespace pyrad {

// Per-channel preprocessing convention of the corpus the teacher was
// pretrained on. Images are scaled to [0,1] and then (x - mean) / std.
struct NormParams {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> std{0.25f, 0.25f, 0.25f};
};

struct ArchiveMeta {
  std::string kind = "teacher";  // "teacher" or "checkpoint"
  std::string arch_id;
  int input_size = 0;
  NormParams norm;
  nlohmann::json extra;  // free-form (pretraining stats, checkpoint fields)
};

// Single-file map from tensor name to dense float array plus a metadata
// record. Binary layout is documented in the README ("Weights archive");
// save/load round-trips are bit-exact.
struct Archive {
  ArchiveMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::filesystem::path& file) const;
  static Archive load(const std::filesystem::path& file);

  const Tensor* find(const std::string& name) const;

  // FNV-1a over the serialized file bytes.
  static std::string fingerprint(const std::filesystem::path& file);
};

}  // namespace pyrad
