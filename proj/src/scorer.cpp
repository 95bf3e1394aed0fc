#include "pyrad/scorer.hpp"

#include <algorithm>
#include <cmath>

#include "pyrad/distill.hpp"
#include "pyrad/error.hpp"

namespace pyrad {

namespace {

// Separable Gaussian with clamp-to-edge borders; radius 3 sigma.
Tensor gaussian_blur(const Tensor& grid, float sigma) {
  const int h = grid.dim(0), w = grid.dim(1);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.f * sigma)));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  float sum = 0.f;
  for (int i = -radius; i <= radius; ++i) {
    const float v = std::exp(-0.5f * (static_cast<float>(i) * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (float& v : kernel) v /= sum;

  Tensor tmp({h, w}), out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] *
               grid.at2(y, std::clamp(x + i, 0, w - 1));
      tmp.at2(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] *
               tmp.at2(std::clamp(y + i, 0, h - 1), x);
      out.at2(y, x) = acc;
    }
  return out;
}

}  // namespace

Tensor level_map(const Tensor& f_t, const Tensor& f_s) { return position_loss_map(f_t, f_s); }

Tensor upsample_bilinear(const Tensor& grid, int target_h, int target_w) {
  if (grid.ndim() != 2)
    throw DimensionError("upsample expects a [H,W] grid, got " + grid.shape_str());
  const int sh = grid.dim(0), sw = grid.dim(1);
  if (target_h < sh || target_w < sw)
    throw UsageError("upsample target " + std::to_string(target_h) + "x" +
                     std::to_string(target_w) + " is smaller than source " + std::to_string(sh) +
                     "x" + std::to_string(sw));
  if (target_h == sh && target_w == sw) return grid;

  Tensor out({target_h, target_w});
  const float ry = static_cast<float>(sh) / static_cast<float>(target_h);
  const float rx = static_cast<float>(sw) / static_cast<float>(target_w);
  for (int ty = 0; ty < target_h; ++ty) {
    // Half-pixel centers: target center maps to source coordinate space.
    const float sy = (static_cast<float>(ty) + 0.5f) * ry - 0.5f;
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, sh - 1);
    const int y1 = std::min(y0 + 1, sh - 1);
    const float fy = std::clamp(sy - static_cast<float>(y0), 0.f, 1.f);
    for (int tx = 0; tx < target_w; ++tx) {
      const float sx = (static_cast<float>(tx) + 0.5f) * rx - 0.5f;
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, sw - 1);
      const int x1 = std::min(x0 + 1, sw - 1);
      const float fx = std::clamp(sx - static_cast<float>(x0), 0.f, 1.f);
      // a + f*(b-a) keeps constants exact and stays inside [min, max].
      const float top = grid.at2(y0, x0) + fx * (grid.at2(y0, x1) - grid.at2(y0, x0));
      const float bot = grid.at2(y1, x0) + fx * (grid.at2(y1, x1) - grid.at2(y1, x0));
      out.at2(ty, tx) = top + fy * (bot - top);
    }
  }
  return out;
}

Tensor fuse(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw UsageError("fuse called with no maps");
  for (const Tensor& m : maps)
    if (!m.same_shape(maps.front()))
      throw DimensionError("fuse got mixed grid shapes: " + maps.front().shape_str() + " vs " +
                           m.shape_str());
  // Per-pixel product accumulated in double so the stored float is the
  // correctly rounded product rather than a chain of float roundings.
  Tensor out = maps.front();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double p = static_cast<double>(out.data[i]);
    for (std::size_t l = 1; l < maps.size(); ++l) p *= static_cast<double>(maps[l].data[i]);
    out.data[i] = static_cast<float>(p);
  }
  return out;
}

std::vector<std::pair<AnomalyMap, float>> score_batch(const NetworkHandle& teacher,
                                                      const NetworkHandle& student,
                                                      const Tensor& batch,
                                                      const PyramidConfig& config,
                                                      const ScoreOptions& options) {
  if (teacher.arch_id != student.arch_id)
    throw ConfigError("teacher architecture '" + teacher.arch_id + "' does not match student '" +
                      student.arch_id + "'");
  const int n = batch.dim(0), h = batch.dim(2), w = batch.dim(3);
  const std::vector<Tensor> taps_t = extract_pyramid(teacher, batch, config);
  const std::vector<Tensor> taps_s = extract_pyramid(student, batch, config);

  std::vector<std::pair<AnomalyMap, float>> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<Tensor> upsampled;
    upsampled.reserve(taps_t.size());
    for (std::size_t l = 0; l < taps_t.size(); ++l) {
      const Tensor grid = level_map(image_slice(taps_t[l], i), image_slice(taps_s[l], i));
      upsampled.push_back(upsample_bilinear(grid, h, w));
    }
    AnomalyMap map;
    map.scores = fuse(upsampled);
    if (options.smooth_sigma > 0.f) map.scores = gaussian_blur(map.scores, options.smooth_sigma);
    map.source_h = h;
    map.source_w = w;
    if (options.keep_level_maps) map.per_level = std::move(upsampled);
    const float score = map.scores.max_value();
    out.emplace_back(std::move(map), score);
  }
  return out;
}

std::pair<AnomalyMap, float> score_image(const NetworkHandle& teacher,
                                         const NetworkHandle& student, const Tensor& image,
                                         const PyramidConfig& config,
                                         const ScoreOptions& options) {
  if (image.ndim() != 3)
    throw DimensionError("score_image expects a [C,H,W] image, got " + image.shape_str());
  Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)});
  batch.data = image.data;
  auto scored = score_batch(teacher, student, batch, config, options);
  return std::move(scored.front());
}

}  // namespace pyrad
