#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "pyrad/backbone.hpp"
#include "pyrad/metrics.hpp"
#include "pyrad/scorer.hpp"
#include "pyrad/trainer.hpp"

namespace pyrad {

// Resolved run configuration: pipeline knobs plus environment paths. The
// full snapshot (to_json) is written next to every output artifact; the
// fingerprints cover only semantic fields, so moving files around never
// changes them.
struct RunConfig {
  std::string category = "synth";
  std::filesystem::path data_root = ".";
  std::filesystem::path teacher;
  std::filesystem::path out_dir = "runs/out";

  PyramidConfig pyramid;
  TrainConfig train;
  ProOptions pro;
  float smooth_sigma = 0.f;

  // Parses a JSON config file; unknown keys are configuration errors.
  static RunConfig from_file(const std::filesystem::path& file);
  // Applies the same keys from an in-memory object (used for overrides).
  void apply_json(const nlohmann::json& j);

  nlohmann::json to_json() const;  // full snapshot, paths included

  // Hash over every semantic field (excludes data_root/teacher/out_dir).
  std::string fingerprint() const;
  // Hash over the fields that must agree between training and scoring:
  // blocks, level weights, input size, smoothing.
  std::string pyramid_fingerprint() const;
};

}  // namespace pyrad
