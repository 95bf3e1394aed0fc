#include "pyrad/distill.hpp"

#include <algorithm>
#include <cmath>

#include "pyrad/error.hpp"

namespace pyrad {

namespace {

void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

// Channel stride and position count for [C,H,W] / [N,C,H,W] maps.
struct MapDims {
  int n, c, hw;
};

MapDims map_dims(const Tensor& t) {
  if (t.ndim() == 3) return {1, t.dim(0), t.dim(1) * t.dim(2)};
  if (t.ndim() == 4) return {t.dim(0), t.dim(1), t.dim(2) * t.dim(3)};
  throw DimensionError("feature map must be [C,H,W] or [N,C,H,W], got " + t.shape_str());
}

}  // namespace

Tensor normalize_positions(const Tensor& map, float epsilon) {
  check_finite(map, "feature map");
  const MapDims d = map_dims(map);
  Tensor out(map.shape);
  for (int n = 0; n < d.n; ++n) {
    const float* src = map.ptr() + static_cast<std::size_t>(n) * d.c * d.hw;
    float* dst = out.ptr() + static_cast<std::size_t>(n) * d.c * d.hw;
    for (int p = 0; p < d.hw; ++p) {
      double sq = 0.0;
      for (int c = 0; c < d.c; ++c) {
        const float v = src[static_cast<std::size_t>(c) * d.hw + p];
        sq += static_cast<double>(v) * v;
      }
      const float scale = 1.f / (static_cast<float>(std::sqrt(sq)) + epsilon);
      for (int c = 0; c < d.c; ++c)
        dst[static_cast<std::size_t>(c) * d.hw + p] = src[static_cast<std::size_t>(c) * d.hw + p] * scale;
    }
  }
  return out;
}

float position_loss(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size())
    throw DimensionError("position vectors have different lengths: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dv = static_cast<double>(a[i]) - b[i];
    s += dv * dv;
  }
  return static_cast<float>(0.5 * s);
}

Tensor position_loss_map(const Tensor& f_t, const Tensor& f_s, float epsilon) {
  if (!f_t.same_shape(f_s))
    throw DimensionError("teacher/student map shapes differ: " + f_t.shape_str() + " vs " +
                         f_s.shape_str());
  if (f_t.ndim() != 3)
    throw DimensionError("position_loss_map expects [C,H,W], got " + f_t.shape_str());
  const Tensor tn = normalize_positions(f_t, epsilon);
  const Tensor sn = normalize_positions(f_s, epsilon);
  const int c = f_t.dim(0), h = f_t.dim(1), w = f_t.dim(2);
  const int hw = h * w;
  Tensor grid({h, w});
  for (int p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      const double dv = static_cast<double>(tn.data[static_cast<std::size_t>(ci) * hw + p]) -
                        sn.data[static_cast<std::size_t>(ci) * hw + p];
      s += dv * dv;
    }
    // The true value is <= 2 (unit vectors at most 2 apart); the min guards
    // against float rounding of the normalized components leaking past it.
    grid.data[static_cast<std::size_t>(p)] = std::min(2.f, static_cast<float>(0.5 * s));
  }
  return grid;
}

float level_loss(const Tensor& f_t, const Tensor& f_s, float epsilon) {
  const Tensor grid = position_loss_map(f_t, f_s, epsilon);
  double s = 0.0;
  for (float v : grid.data) s += v;
  return static_cast<float>(s / static_cast<double>(grid.numel()));
}

LossBreakdown total_loss(const std::vector<Tensor>& pyr_t, const std::vector<Tensor>& pyr_s,
                         const PyramidConfig& config, bool keep_maps) {
  if (pyr_t.size() != pyr_s.size() || pyr_t.size() != config.block_ids.size())
    throw ConfigError("pyramid level counts disagree: teacher " + std::to_string(pyr_t.size()) +
                      ", student " + std::to_string(pyr_s.size()) + ", config " +
                      std::to_string(config.block_ids.size()));
  const std::vector<float> alpha = config.weights_or_default();
  LossBreakdown out;
  double total = 0.0;
  for (std::size_t l = 0; l < pyr_t.size(); ++l) {
    Tensor grid = position_loss_map(pyr_t[l], pyr_s[l]);
    double s = 0.0;
    for (float v : grid.data) s += v;
    const float lvl = static_cast<float>(s / static_cast<double>(grid.numel()));
    out.per_level.push_back(lvl);
    total += static_cast<double>(alpha[l]) * lvl;
    if (keep_maps) out.per_position.push_back(std::move(grid));
  }
  out.total = static_cast<float>(total);
  return out;
}

float batch_loss(const std::vector<LossBreakdown>& batch) {
  if (batch.empty()) throw UsageError("batch_loss called on an empty batch");
  double s = 0.0;
  for (const LossBreakdown& b : batch) s += b.total;
  return static_cast<float>(s / static_cast<double>(batch.size()));
}

double batch_loss_and_grad(const std::vector<Tensor>& taps_t, const std::vector<Tensor>& taps_s,
                           const PyramidConfig& config, std::vector<Tensor>& dtaps_s) {
  if (taps_t.size() != taps_s.size() || taps_t.size() != config.block_ids.size())
    throw ConfigError("tap level counts disagree with pyramid config");
  const std::vector<float> alpha = config.weights_or_default();
  dtaps_s.clear();
  double loss = 0.0;
  for (std::size_t l = 0; l < taps_t.size(); ++l) {
    const Tensor& t = taps_t[l];
    const Tensor& s = taps_s[l];
    if (!t.same_shape(s))
      throw DimensionError("teacher/student tap shapes differ at level " + std::to_string(l) +
                           ": " + t.shape_str() + " vs " + s.shape_str());
    const int N = t.dim(0), C = t.dim(1);
    const int hw = t.dim(2) * t.dim(3);
    Tensor grad(s.shape);
    // Per position: normalized teacher t̂ is constant; with n = ‖s‖ and
    // d = n + ε, d(½‖t̂−ŝ‖²)/ds_j = u_j/d − (u·s)·s_j/(n·d²) for u = ŝ−t̂.
    const double w = static_cast<double>(alpha[l]) / (static_cast<double>(N) * hw);
    for (int n = 0; n < N; ++n) {
      const float* tp = t.ptr() + static_cast<std::size_t>(n) * C * hw;
      const float* sp = s.ptr() + static_cast<std::size_t>(n) * C * hw;
      float* gp = grad.ptr() + static_cast<std::size_t>(n) * C * hw;
      for (int p = 0; p < hw; ++p) {
        double tsq = 0.0, ssq = 0.0;
        for (int c = 0; c < C; ++c) {
          const std::size_t i = static_cast<std::size_t>(c) * hw + p;
          tsq += static_cast<double>(tp[i]) * tp[i];
          ssq += static_cast<double>(sp[i]) * sp[i];
        }
        const double tn = std::sqrt(tsq), sn = std::sqrt(ssq);
        const double tscale = 1.0 / (tn + kNormEps);
        const double d = sn + kNormEps;
        const double sscale = 1.0 / d;
        double pos = 0.0, u_dot_s = 0.0;
        for (int c = 0; c < C; ++c) {
          const std::size_t i = static_cast<std::size_t>(c) * hw + p;
          const double u = sp[i] * sscale - tp[i] * tscale;  // ŝ − t̂
          pos += u * u;
          u_dot_s += u * sp[i];
        }
        loss += w * 0.5 * pos;
        const double k2 = sn > 0.0 ? u_dot_s / (sn * d * d) : 0.0;
        for (int c = 0; c < C; ++c) {
          const std::size_t i = static_cast<std::size_t>(c) * hw + p;
          const double u = sp[i] * sscale - tp[i] * tscale;
          gp[i] = static_cast<float>(w * (u * sscale - k2 * sp[i]));
        }
      }
    }
    dtaps_s.push_back(std::move(grad));
  }
  return loss;
}

}  // namespace pyrad
