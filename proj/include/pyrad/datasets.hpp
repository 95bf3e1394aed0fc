#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pyrad/archive.hpp"
#include "pyrad/tensor.hpp"

namespace pyrad {

// One test image: path, defect-type label ("good" = defect-free), and the
// ground-truth mask path (empty for good images).
struct TestItem {
  std::filesystem::path image;
  std::string defect_type;
  std::filesystem::path mask;

  bool is_defective() const { return defect_type != "good"; }
};

// Lazily-loadable category: paths only; pixel data is read on demand by the
// load_* helpers below at the recorded input size.
struct CategorySet {
  std::string name;
  std::filesystem::path dir;
  int input_size = 0;
  std::vector<std::filesystem::path> train;  // anomaly-free
  std::vector<TestItem> test;
};

// Expects the layout <root>/<name>/train/good/*.png,
// <root>/<name>/test/<defect_type>/*.png and, for defective types,
// <root>/<name>/ground_truth/<defect_type>/<stem>_mask.png. Iteration order
// is sorted by (label, filename) for determinism.
CategorySet load_category(const std::filesystem::path& root, const std::string& name,
                          int input_size);

// Decoded RGB image in [0,1], bilinearly resized to input_size: [3,S,S].
Tensor load_image_rgb01(const std::filesystem::path& file, int input_size);

// Same, then normalized channel-wise: (x - mean) / std.
Tensor load_image_tensor(const std::filesystem::path& file, int input_size,
                         const NormParams& norm);

// {0,1} mask [S,S]; nearest-neighbor resize, then binarize at 0.5.
Tensor load_mask(const std::filesystem::path& file, int input_size);

// Normalized image plus its mask (all-zero for good items). Checks that the
// mask and image files agree in source dimensions before any resizing.
std::pair<Tensor, Tensor> load_test_pair(const TestItem& item, int input_size,
                                         const NormParams& norm);

// Channel-wise (x - mean) / std on an in-memory [3,H,W] image.
Tensor normalize_image(const Tensor& rgb01, const NormParams& norm);

// Deterministic synthetic category: sinusoidal background texture plus
// per-pixel noise, with disk-shaped intensity defects on the defective test
// images. Same spec -> bit-identical pixels (images are quantized to 8-bit
// values so a write/load round-trip is exact).
struct SynthSpec {
  std::string name = "synth";
  int image_size = 64;
  uint64_t seed = 1;

  // Background texture.
  float freq_u = 2.f;        // cycles across the image
  float freq_v = 3.f;
  float angle = 0.f;         // pattern rotation in radians
  float pattern_amp = 0.35f;
  float noise_amp = 0.04f;
  bool noise_only = false;   // drop the pattern, keep only noise

  // Defects (defective test images only).
  int blob_count_min = 1;
  int blob_count_max = 3;
  float radius_min = 3.f;
  float radius_max = 7.f;
  float intensity_delta = 0.45f;

  // Counts.
  int train_count = 64;
  int test_good = 20;
  int test_defect = 20;
};

struct SynthImage {
  Tensor image;  // [3,S,S] in [0,1], 8-bit-quantized values
  Tensor mask;   // [S,S] of {0,1}; all-zero unless defective
  std::string defect_type;
};

struct SynthCategory {
  std::string name;
  int image_size = 0;
  std::vector<SynthImage> train;
  std::vector<SynthImage> test;
};

SynthCategory generate_synthetic(const SynthSpec& spec);

// Writes the category in the standard directory layout under root; returns
// root/<name>. load_category over the result reproduces the generated
// pixels exactly.
std::filesystem::path write_category(const SynthCategory& category,
                                     const std::filesystem::path& root);

// {0,1} disk: pixel (x,y) is inside iff (x-cx)^2 + (y-cy)^2 <= r^2.
Tensor disk_mask(int size, float cx, float cy, float radius);

// Three well-separated texture classes for classifier pretraining.
std::vector<SynthSpec> builtin_texture_classes(int image_size, uint64_t seed);

// Trains a small classifier to tell the given texture classes apart and
// exports its trunk as a teacher archive (classifier head stripped). The
// archive records the corpus' channel statistics as its normalization.
// Holdout accuracy below 0.8 is a training error.
Archive pretrain_toy_teacher(const std::vector<SynthSpec>& classes, int epochs, uint64_t seed);

}  // namespace pyrad
