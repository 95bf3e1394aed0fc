#pragma once

#include <vector>

#include "pyrad/backbone.hpp"
#include "pyrad/tensor.hpp"

namespace pyrad {

// Epsilon added to the norm denominator when unit-normalizing feature
// vectors. Added (not clamped) so the mapping stays differentiable; a
// vector with norm ~0 maps to ~0 rather than blowing up.
inline constexpr float kNormEps = 1e-12f;

// Loss of one image across pyramid levels: per-level spatial means, their
// weighted sum, and (optionally) the raw per-position grids.
struct LossBreakdown {
  std::vector<float> per_level;
  float total = 0.f;
  std::vector<Tensor> per_position;  // [H,W] per level; filled on request
};

// Unit-normalizes the channel vector at every spatial position. Accepts
// [C,H,W] or [N,C,H,W]; the norm runs across C.
Tensor normalize_positions(const Tensor& map, float epsilon = kNormEps);

// ½‖a − b‖² for two already-normalized vectors (= 1 − <a,b> on unit inputs).
float position_loss(const std::vector<float>& a, const std::vector<float>& b);

// Per-position ½‖t̂ − ŝ‖² grid [H,W] between two raw [C,H,W] maps;
// normalization happens inside.
Tensor position_loss_map(const Tensor& f_t, const Tensor& f_s, float epsilon = kNormEps);

// Spatial mean of position_loss_map.
float level_loss(const Tensor& f_t, const Tensor& f_s, float epsilon = kNormEps);

// Weighted sum of level losses for one image's pyramids ([C,H,W] per level).
LossBreakdown total_loss(const std::vector<Tensor>& pyr_t, const std::vector<Tensor>& pyr_s,
                         const PyramidConfig& config, bool keep_maps = false);

// Arithmetic mean of per-image totals.
float batch_loss(const std::vector<LossBreakdown>& batch);

// Training objective over [N,C,H,W] tap batches: returns the batch-mean
// loss and writes d(loss)/d(raw student taps) into `dtaps_s` (same shapes
// as taps_s). The teacher side is treated as constant. Returned in double
// so finite-difference probes of the objective are not rounding-limited.
double batch_loss_and_grad(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                           const PyramidConfig& config, std::vector<Tensor>& dtaps_s);

}  // namespace pyrad
