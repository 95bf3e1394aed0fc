#pragma once

#include <vector>

#include "pyrad/backbone.hpp"
#include "pyrad/tensor.hpp"

namespace pyrad {

// Fused anomaly grid for one image, plus optional per-level diagnostics.
struct AnomalyMap {
  Tensor scores;                  // [H,W] at source size
  int source_h = 0, source_w = 0;
  std::vector<Tensor> per_level;  // upsampled [H,W] per level, kept on request
};

struct ScoreOptions {
  bool keep_level_maps = false;
  // Optional Gaussian blur of the fused map (sigma in pixels, 0 = off).
  // Off by default: the method itself defines no smoothing.
  float smooth_sigma = 0.f;
};

// Per-position loss grid between two same-shaped [C,H,W] feature maps.
Tensor level_map(const Tensor& f_t, const Tensor& f_s);

// Bilinear upsampling with half-pixel centers; target must be >= source in
// both dimensions. Constant grids stay exactly constant; values never
// leave [min(src), max(src)].
Tensor upsample_bilinear(const Tensor& grid, int target_h, int target_w);

// Element-wise product across equal-sized [H,W] grids.
Tensor fuse(const std::vector<Tensor>& maps);

// Full scoring pipeline for one [C,H,W] image: one forward per network,
// per-level maps, upsample to the image size, fuse. The image score is the
// exact maximum of the fused map.
std::pair<AnomalyMap, float> score_image(const NetworkHandle& teacher,
                                         const NetworkHandle& student, const Tensor& image,
                                         const PyramidConfig& config,
                                         const ScoreOptions& options = {});

// Batched variant: one forward per network for the whole [N,C,H,W] batch.
std::vector<std::pair<AnomalyMap, float>> score_batch(const NetworkHandle& teacher,
                                                      const NetworkHandle& student,
                                                      const Tensor& batch,
                                                      const PyramidConfig& config,
                                                      const ScoreOptions& options = {});

}  // namespace pyrad
