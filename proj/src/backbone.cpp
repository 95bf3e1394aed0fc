#include "pyrad/backbone.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <optional>

#include "pyrad/error.hpp"
#include "pyrad/hash.hpp"
#include "pyrad/rng.hpp"

namespace pyrad {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

}  // namespace

namespace {

struct Conv2d {
  int id = -1;
  int cin = 0, cout = 0, k = 1, stride = 1, pad = 0;
  bool has_bias = false;
  Tensor w, b;    // w: [cout, cin, k, k]
  Tensor gw, gb;  // sized on first backward

  void init_shapes() {
    w = Tensor({cout, cin, k, k});
    if (has_bias) b = Tensor({cout});
  }

  void im2col(const float* x, int H, int W, int Ho, int Wo, float* col) const {
    const int P = Ho * Wo;
    for (int ci = 0; ci < cin; ++ci) {
      const float* plane = x + static_cast<std::size_t>(ci) * H * W;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          float* dst = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * P;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride + ky - pad;
            float* row = dst + static_cast<std::size_t>(oy) * Wo;
            if (iy < 0 || iy >= H) {
              std::fill_n(row, Wo, 0.f);
              continue;
            }
            const float* src = plane + static_cast<std::size_t>(iy) * W;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              row[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.f;
            }
          }
        }
      }
    }
  }

  void col2im_add(const float* col, int H, int W, int Ho, int Wo, float* x) const {
    const int P = Ho * Wo;
    for (int ci = 0; ci < cin; ++ci) {
      float* plane = x + static_cast<std::size_t>(ci) * H * W;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const float* src = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * P;
          for (int oy = 0; oy < Ho; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            float* row = plane + static_cast<std::size_t>(iy) * W;
            const float* srow = src + static_cast<std::size_t>(oy) * Wo;
            for (int ox = 0; ox < Wo; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < W) row[ix] += srow[ox];
            }
          }
        }
      }
    }
  }

  Tensor forward(const Tensor& x, Cache* cache) const {
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = conv_out(H, k, stride, pad), Wo = conv_out(W, k, stride, pad);
    const int K = cin * k * k, P = Ho * Wo;
    Tensor y({N, cout, Ho, Wo});
    RowMat col(K, P);
    CMapRM Wm(w.ptr(), cout, K);
    for (int n = 0; n < N; ++n) {
      im2col(x.ptr() + static_cast<std::size_t>(n) * cin * H * W, H, W, Ho, Wo, col.data());
      MapRM Ym(y.ptr() + static_cast<std::size_t>(n) * cout * P, cout, P);
      Ym.noalias() = Wm * col;
    }
    if (has_bias) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < cout; ++c) {
          float* p = y.ptr() + (static_cast<std::size_t>(n) * cout + c) * P;
          const float bv = b.data[static_cast<size_t>(c)];
          for (int i = 0; i < P; ++i) p[i] += bv;
        }
    }
    if (cache) cache->slots[static_cast<size_t>(id)].a = x;
    return y;
  }

  Tensor backward(const Tensor& dy, Cache& cache) {
    const Tensor& x = cache.slots[static_cast<size_t>(id)].a;
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = dy.dim(2), Wo = dy.dim(3);
    const int K = cin * k * k, P = Ho * Wo;
    if (gw.empty()) gw = Tensor(w.shape);
    if (has_bias && gb.empty()) gb = Tensor(b.shape);
    Tensor dx(x.shape);
    RowMat col(K, P), dcol(K, P);
    CMapRM Wm(w.ptr(), cout, K);
    MapRM Gm(gw.ptr(), cout, K);
    for (int n = 0; n < N; ++n) {
      im2col(x.ptr() + static_cast<std::size_t>(n) * cin * H * W, H, W, Ho, Wo, col.data());
      CMapRM dYm(dy.ptr() + static_cast<std::size_t>(n) * cout * P, cout, P);
      Gm.noalias() += dYm * col.transpose();
      dcol.noalias() = Wm.transpose() * dYm;
      col2im_add(dcol.data(), H, W, Ho, Wo, dx.ptr() + static_cast<std::size_t>(n) * cin * H * W);
    }
    if (has_bias) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < cout; ++c) {
          const float* p = dy.ptr() + (static_cast<std::size_t>(n) * cout + c) * P;
          double s = 0.0;
          for (int i = 0; i < P; ++i) s += p[i];
          gb.data[static_cast<size_t>(c)] += static_cast<float>(s);
        }
    }
    return dx;
  }
};

struct BatchNorm {
  int id = -1;
  int c = 0;
  float eps = 1e-5f;
  float momentum = 0.1f;
  Tensor gamma, beta, rmean, rvar;
  Tensor ggamma, gbeta;

  void init_shapes() {
    gamma = Tensor({c}, 1.f);
    beta = Tensor({c});
    rmean = Tensor({c});
    rvar = Tensor({c}, 1.f);
  }

  Tensor forward(const Tensor& x, bool train, Cache* cache) {
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor y(x.shape);
    if (!train) {
      for (int ch = 0; ch < c; ++ch) {
        const float m = rmean.data[static_cast<size_t>(ch)];
        const float inv = 1.f / std::sqrt(rvar.data[static_cast<size_t>(ch)] + eps);
        const float g = gamma.data[static_cast<size_t>(ch)], bb = beta.data[static_cast<size_t>(ch)];
        for (int n = 0; n < N; ++n) {
          const float* xp = x.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
          float* yp = y.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - m) * inv + bb;
        }
      }
      return y;
    }

    const double M = static_cast<double>(N) * H * W;
    Tensor xhat(x.shape), invstd({c});
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* xp = x.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += xp[i];
          sq += static_cast<double>(xp[i]) * xp[i];
        }
      }
      const double mean = sum / M;
      const double var = std::max(0.0, sq / M - mean * mean);  // biased
      const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
      invstd.data[static_cast<size_t>(ch)] = inv;
      const float g = gamma.data[static_cast<size_t>(ch)], bb = beta.data[static_cast<size_t>(ch)];
      const float mf = static_cast<float>(mean);
      for (int n = 0; n < N; ++n) {
        const float* xp = x.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        float* hp = xhat.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        float* yp = y.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const float h = (xp[i] - mf) * inv;
          hp[i] = h;
          yp[i] = g * h + bb;
        }
      }
      rmean.data[static_cast<size_t>(ch)] =
          (1.f - momentum) * rmean.data[static_cast<size_t>(ch)] + momentum * mf;
      rvar.data[static_cast<size_t>(ch)] =
          (1.f - momentum) * rvar.data[static_cast<size_t>(ch)] + momentum * static_cast<float>(var);
    }
    if (cache) {
      cache->slots[static_cast<size_t>(id)].a = std::move(xhat);
      cache->slots[static_cast<size_t>(id)].b = std::move(invstd);
    }
    return y;
  }

  Tensor backward(const Tensor& dy, Cache& cache) {
    LayerSlot& slot = cache.slots[static_cast<size_t>(id)];
    const Tensor& xhat = slot.a;
    const Tensor& invstd = slot.b;
    const int N = dy.dim(0), H = dy.dim(2), W = dy.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const double M = static_cast<double>(N) * H * W;
    if (ggamma.empty()) ggamma = Tensor({c});
    if (gbeta.empty()) gbeta = Tensor({c});
    Tensor dx(dy.shape);
    for (int ch = 0; ch < c; ++ch) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* dp = dy.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        const float* hp = xhat.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dp[i];
          sum_dy_xhat += static_cast<double>(dp[i]) * hp[i];
        }
      }
      ggamma.data[static_cast<size_t>(ch)] += static_cast<float>(sum_dy_xhat);
      gbeta.data[static_cast<size_t>(ch)] += static_cast<float>(sum_dy);
      const float g = gamma.data[static_cast<size_t>(ch)];
      const float inv = invstd.data[static_cast<size_t>(ch)];
      const float mean_dy = static_cast<float>(sum_dy / M);
      const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / M);
      for (int n = 0; n < N; ++n) {
        const float* dp = dy.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        const float* hp = xhat.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        float* op = dx.ptr() + (static_cast<std::size_t>(n) * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          op[i] = g * inv * (dp[i] - mean_dy - hp[i] * mean_dy_xhat);
      }
    }
    return dx;
  }
};

struct ReLU {
  int id = -1;

  Tensor forward(const Tensor& x, Cache* cache) const {
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > 0.f ? x.data[i] : 0.f;
    if (cache) cache->slots[static_cast<size_t>(id)].a = y;
    return y;
  }

  Tensor backward(const Tensor& dy, Cache& cache) const {
    const Tensor& y = cache.slots[static_cast<size_t>(id)].a;
    Tensor dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[i] = y.data[i] > 0.f ? dy.data[i] : 0.f;
    return dx;
  }
};

struct MaxPool {
  int id = -1;
  int k = 3, stride = 2, pad = 1;

  Tensor forward(const Tensor& x, Cache* cache) const {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = conv_out(H, k, stride, pad), Wo = conv_out(W, k, stride, pad);
    Tensor y({N, C, Ho, Wo});
    std::vector<int32_t> arg;
    if (cache) arg.resize(y.numel());
    std::size_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float* plane = x.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox, ++o) {
            float best = -std::numeric_limits<float>::infinity();
            int32_t best_i = 0;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= W) continue;
                const float v = plane[iy * W + ix];
                if (v > best) {
                  best = v;
                  best_i = iy * W + ix;
                }
              }
            }
            y.data[o] = best;
            if (cache) arg[o] = best_i;
          }
      }
    if (cache) {
      cache->slots[static_cast<size_t>(id)].idx = std::move(arg);
      cache->slots[static_cast<size_t>(id)].in_shape = x.shape;
    }
    return y;
  }

  Tensor backward(const Tensor& dy, Cache& cache) const {
    LayerSlot& slot = cache.slots[static_cast<size_t>(id)];
    Tensor dx(slot.in_shape);
    const int C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    const int N = dy.dim(0), Ho = dy.dim(2), Wo = dy.dim(3);
    std::size_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        float* plane = dx.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int i = 0; i < Ho * Wo; ++i, ++o) plane[slot.idx[o]] += dy.data[o];
      }
    return dx;
  }
};

struct GlobalAvgPool {
  int id = -1;

  Tensor forward(const Tensor& x, Cache* cache) const {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor y({N, C});
    const float inv = 1.f / static_cast<float>(H * W);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float* p = x.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        double s = 0.0;
        for (int i = 0; i < H * W; ++i) s += p[i];
        y.at2(n, c) = static_cast<float>(s) * inv;
      }
    if (cache) cache->slots[static_cast<size_t>(id)].in_shape = x.shape;
    return y;
  }

  Tensor backward(const Tensor& dy, Cache& cache) const {
    LayerSlot& slot = cache.slots[static_cast<size_t>(id)];
    Tensor dx(slot.in_shape);
    const int N = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    const float inv = 1.f / static_cast<float>(H * W);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        float* p = dx.ptr() + (static_cast<std::size_t>(n) * C + c) * H * W;
        const float g = dy.at2(n, c) * inv;
        for (int i = 0; i < H * W; ++i) p[i] = g;
      }
    return dx;
  }
};

struct Linear {
  int id = -1;
  int din = 0, dout = 0;
  Tensor w, b;  // w: [dout, din]
  Tensor gw, gb;

  void init_shapes() {
    w = Tensor({dout, din});
    b = Tensor({dout});
  }

  Tensor forward(const Tensor& x, Cache* cache) const {
    const int N = x.dim(0);
    Tensor y({N, dout});
    CMapRM Xm(x.ptr(), N, din), Wm(w.ptr(), dout, din);
    MapRM Ym(y.ptr(), N, dout);
    Ym.noalias() = Xm * Wm.transpose();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < dout; ++o) y.at2(n, o) += b.data[static_cast<size_t>(o)];
    if (cache) cache->slots[static_cast<size_t>(id)].a = x;
    return y;
  }

  Tensor backward(const Tensor& dy, Cache& cache) {
    const Tensor& x = cache.slots[static_cast<size_t>(id)].a;
    const int N = x.dim(0);
    if (gw.empty()) gw = Tensor(w.shape);
    if (gb.empty()) gb = Tensor(b.shape);
    CMapRM Xm(x.ptr(), N, din), dYm(dy.ptr(), N, dout), Wm(w.ptr(), dout, din);
    MapRM Gw(gw.ptr(), dout, din);
    Gw.noalias() += dYm.transpose() * Xm;
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < dout; ++o) gb.data[static_cast<size_t>(o)] += dy.at2(n, o);
    Tensor dx({N, din});
    MapRM dXm(dx.ptr(), N, din);
    dXm.noalias() = dYm * Wm;
    return dx;
  }
};

Conv2d make_conv(int id, int cin, int cout, int k, int stride, int pad) {
  Conv2d c;
  c.id = id;
  c.cin = cin;
  c.cout = cout;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  c.init_shapes();
  return c;
}

BatchNorm make_bn(int id, int channels) {
  BatchNorm b;
  b.id = id;
  b.c = channels;
  b.init_shapes();
  return b;
}

Linear make_linear(int id, int din, int dout) {
  Linear l;
  l.id = id;
  l.din = din;
  l.dout = dout;
  l.init_shapes();
  return l;
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
  Tensor y(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i) y.data[i] = a.data[i] + b.data[i];
  return y;
}

void add_inplace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] += b.data[i];
}

struct BasicBlock {
  Conv2d conv1, conv2;
  BatchNorm bn1, bn2;
  ReLU relu1, relu2;
  bool has_down = false;
  Conv2d down_conv;
  BatchNorm down_bn;
  int add_id = -1;  // caches the pre-activation sum mask via relu2

  Tensor forward(const Tensor& x, bool train, Cache* cache) {
    Tensor h = conv1.forward(x, cache);
    h = bn1.forward(h, train, cache);
    h = relu1.forward(h, cache);
    h = conv2.forward(h, cache);
    h = bn2.forward(h, train, cache);
    Tensor sc = has_down ? down_bn.forward(down_conv.forward(x, cache), train, cache) : x;
    Tensor s = add_tensors(h, sc);
    return relu2.forward(s, cache);
  }

  Tensor backward(const Tensor& dy, Cache& cache) {
    Tensor ds = relu2.backward(dy, cache);
    Tensor dh = bn2.backward(ds, cache);
    dh = conv2.backward(dh, cache);
    dh = relu1.backward(dh, cache);
    dh = bn1.backward(dh, cache);
    Tensor dx = conv1.backward(dh, cache);
    if (has_down) {
      Tensor dsc = down_bn.backward(ds, cache);
      add_inplace(dx, down_conv.backward(dsc, cache));
    } else {
      add_inplace(dx, ds);
    }
    return dx;
  }
};

struct Stage {
  std::vector<BasicBlock> blocks;

  Tensor forward(Tensor x, bool train, Cache* cache) {
    for (auto& b : blocks) x = b.forward(x, train, cache);
    return x;
  }
  Tensor backward(Tensor dy, Cache& cache) {
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) dy = it->backward(dy, cache);
    return dy;
  }
};

}  // namespace

struct Network::Impl {
  ArchSpec spec;
  int id_count = 0;

  Conv2d stem_conv;
  BatchNorm stem_bn;
  ReLU stem_relu;
  std::optional<MaxPool> pool;
  std::vector<Stage> stages;
  std::optional<GlobalAvgPool> gap;
  std::optional<Linear> fc;

  explicit Impl(const ArchSpec& s) : spec(s) {
    auto next = [this]() { return id_count++; };

    stem_conv = make_conv(next(), spec.in_channels, spec.stem_channels, spec.stem_kernel,
                          spec.stem_stride, spec.stem_pad);
    stem_bn = make_bn(next(), spec.stem_channels);
    stem_relu.id = next();
    if (spec.pool_after_stem) {
      pool.emplace();
      pool->id = next();
    }

    int channels = spec.stem_channels;
    for (const StageSpec& st : spec.stages) {
      Stage stage;
      for (int bi = 0; bi < st.blocks; ++bi) {
        const int stride = bi == 0 ? st.stride : 1;
        const int cin = bi == 0 ? channels : st.channels;
        BasicBlock blk;
        blk.conv1 = make_conv(next(), cin, st.channels, 3, stride, 1);
        blk.bn1 = make_bn(next(), st.channels);
        blk.relu1.id = next();
        blk.conv2 = make_conv(next(), st.channels, st.channels, 3, 1, 1);
        blk.bn2 = make_bn(next(), st.channels);
        blk.has_down = stride != 1 || cin != st.channels;
        if (blk.has_down) {
          blk.down_conv = make_conv(next(), cin, st.channels, 1, stride, 0);
          blk.down_bn = make_bn(next(), st.channels);
        }
        blk.relu2.id = next();
        stage.blocks.push_back(std::move(blk));
      }
      stages.push_back(std::move(stage));
      channels = st.channels;
    }

    if (spec.head_classes > 0) {
      gap.emplace();
      gap->id = next();
      fc = make_linear(next(), channels, spec.head_classes);
    }
  }

  template <typename Fn>
  void visit_convs_bns(Fn&& fn) {
    fn("g1.conv", &stem_conv, static_cast<BatchNorm*>(nullptr));
    fn("g1.bn", static_cast<Conv2d*>(nullptr), &stem_bn);
    for (std::size_t si = 0; si < stages.size(); ++si) {
      const std::string g = "g" + std::to_string(si + 2);
      for (std::size_t bi = 0; bi < stages[si].blocks.size(); ++bi) {
        BasicBlock& blk = stages[si].blocks[bi];
        const std::string p = g + ".b" + std::to_string(bi);
        fn(p + ".conv1", &blk.conv1, static_cast<BatchNorm*>(nullptr));
        fn(p + ".bn1", static_cast<Conv2d*>(nullptr), &blk.bn1);
        fn(p + ".conv2", &blk.conv2, static_cast<BatchNorm*>(nullptr));
        fn(p + ".bn2", static_cast<Conv2d*>(nullptr), &blk.bn2);
        if (blk.has_down) {
          fn(p + ".down.conv", &blk.down_conv, static_cast<BatchNorm*>(nullptr));
          fn(p + ".down.bn", static_cast<Conv2d*>(nullptr), &blk.down_bn);
        }
      }
    }
  }

  // Runs the trunk through group `gmax`, recording tap outputs.
  std::vector<Tensor> run_trunk(const Tensor& x, int gmax, const std::vector<int>& taps,
                                bool train, Cache* cache, Tensor* final_out) {
    std::vector<Tensor> out;
    Tensor cur = stem_conv.forward(x, cache);
    cur = stem_bn.forward(cur, train, cache);
    cur = stem_relu.forward(cur, cache);
    auto want = [&taps](int g) { return std::find(taps.begin(), taps.end(), g) != taps.end(); };
    if (want(1)) out.push_back(cur);
    for (int g = 2; g <= gmax; ++g) {
      if (g == 2 && pool) cur = pool->forward(cur, cache);
      cur = stages[static_cast<size_t>(g - 2)].forward(cur, train, cache);
      if (want(g)) out.push_back(cur);
    }
    if (final_out) *final_out = std::move(cur);
    return out;
  }

  // Walks groups in reverse, adding injected tap gradients along the way.
  // `dcur` enters as dL/d(output of group gmax).
  void back_trunk(Tensor dcur, int gmax, const std::vector<int>& taps,
                  const std::vector<Tensor>& dtaps, Cache& cache) {
    auto tap_grad = [&](int g) -> const Tensor* {
      for (std::size_t i = 0; i < taps.size(); ++i)
        if (taps[i] == g) return &dtaps[i];
      return nullptr;
    };
    for (int g = gmax; g >= 2; --g) {
      if (const Tensor* t = tap_grad(g); t && g != gmax) add_inplace(dcur, *t);
      dcur = stages[static_cast<size_t>(g - 2)].backward(std::move(dcur), cache);
      if (g == 2 && pool) dcur = pool->backward(dcur, cache);
    }
    if (const Tensor* t = tap_grad(1); t && gmax != 1) add_inplace(dcur, *t);
    dcur = stem_relu.backward(dcur, cache);
    dcur = stem_bn.backward(dcur, cache);
    stem_conv.backward(dcur, cache);  // input gradient discarded
  }
};

Network::Network(const ArchSpec& spec) : impl_(std::make_unique<Impl>(spec)) {}
Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

const ArchSpec& Network::spec() const { return impl_->spec; }
int Network::num_groups() const { return impl_->spec.num_groups(); }

std::unique_ptr<Cache> Network::make_cache() const {
  auto c = std::make_unique<Cache>();
  c->slots.resize(static_cast<size_t>(impl_->id_count));
  return c;
}

void Network::init_params(uint64_t seed) {
  Rng rng(seed);
  impl_->visit_convs_bns([&rng](const std::string&, Conv2d* conv, BatchNorm* bn) {
    if (conv) {
      const double std = std::sqrt(2.0 / (static_cast<double>(conv->cout) * conv->k * conv->k));
      for (float& v : conv->w.data) v = static_cast<float>(rng.normal(0.0, std));
      if (conv->has_bias) std::fill(conv->b.data.begin(), conv->b.data.end(), 0.f);
    }
    if (bn) {
      std::fill(bn->gamma.data.begin(), bn->gamma.data.end(), 1.f);
      std::fill(bn->beta.data.begin(), bn->beta.data.end(), 0.f);
      std::fill(bn->rmean.data.begin(), bn->rmean.data.end(), 0.f);
      std::fill(bn->rvar.data.begin(), bn->rvar.data.end(), 1.f);
    }
  });
  if (impl_->fc) {
    for (float& v : impl_->fc->w.data) v = static_cast<float>(rng.normal(0.0, 0.01));
    std::fill(impl_->fc->b.data.begin(), impl_->fc->b.data.end(), 0.f);
  }
}

std::vector<Tensor> Network::forward_pyramid(const Tensor& x, const std::vector<int>& block_ids,
                                             bool train, Cache* cache) {
  if (x.ndim() != 4) throw DimensionError("forward expects [N,C,H,W], got " + x.shape_str());
  if (x.dim(1) != impl_->spec.in_channels)
    throw DimensionError("input has " + std::to_string(x.dim(1)) + " channels, architecture '" +
                         impl_->spec.id + "' expects " + std::to_string(impl_->spec.in_channels));
  if (block_ids.empty()) throw ConfigError("no pyramid blocks configured");
  for (int g : block_ids)
    if (g < 1 || g > num_groups())
      throw ConfigError("unknown block id " + std::to_string(g) + " for architecture '" +
                        impl_->spec.id + "' (valid: 1.." + std::to_string(num_groups()) + ")");
  const int gmax = *std::max_element(block_ids.begin(), block_ids.end());
  return impl_->run_trunk(x, gmax, block_ids, train, cache, nullptr);
}

Tensor Network::forward_logits(const Tensor& x, bool train, Cache* cache) {
  if (!impl_->fc) throw UsageError("network '" + impl_->spec.id + "' has no classifier head");
  Tensor out;
  impl_->run_trunk(x, num_groups(), {}, train, cache, &out);
  out = impl_->gap->forward(out, cache);
  return impl_->fc->forward(out, cache);
}

void Network::backward_taps(const std::vector<Tensor>& dtaps, const std::vector<int>& block_ids,
                            Cache& cache) {
  if (dtaps.size() != block_ids.size())
    throw DimensionError("backward_taps: got " + std::to_string(dtaps.size()) + " gradients for " +
                         std::to_string(block_ids.size()) + " taps");
  const int gmax = *std::max_element(block_ids.begin(), block_ids.end());
  // dtaps are in block-id order; deepest tap seeds the walk.
  Tensor dcur = dtaps.back();
  impl_->back_trunk(std::move(dcur), gmax, block_ids, dtaps, cache);
}

void Network::backward_logits(const Tensor& dlogits, Cache& cache) {
  if (!impl_->fc) throw UsageError("network has no classifier head");
  Tensor d = impl_->fc->backward(dlogits, cache);
  d = impl_->gap->backward(d, cache);
  impl_->back_trunk(std::move(d), num_groups(), {}, {}, cache);
}

void Network::zero_grads() {
  for (ParamRef& p : params())
    if (p.grad && !p.grad->empty()) std::fill(p.grad->data.begin(), p.grad->data.end(), 0.f);
}

std::vector<ParamRef> Network::params() {
  std::vector<ParamRef> out;
  impl_->visit_convs_bns([&out](const std::string& name, Conv2d* conv, BatchNorm* bn) {
    if (conv) {
      out.push_back({name + ".w", &conv->w, &conv->gw});
      if (conv->has_bias) out.push_back({name + ".b", &conv->b, &conv->gb});
    }
    if (bn) {
      out.push_back({name + ".gamma", &bn->gamma, &bn->ggamma});
      out.push_back({name + ".beta", &bn->beta, &bn->gbeta});
    }
  });
  if (impl_->fc) {
    out.push_back({"head.fc.w", &impl_->fc->w, &impl_->fc->gw});
    out.push_back({"head.fc.b", &impl_->fc->b, &impl_->fc->gb});
  }
  return out;
}

std::vector<StateRef> Network::named_state() {
  std::vector<StateRef> out;
  impl_->visit_convs_bns([&out](const std::string& name, Conv2d* conv, BatchNorm* bn) {
    if (conv) {
      out.push_back({name + ".w", &conv->w});
      if (conv->has_bias) out.push_back({name + ".b", &conv->b});
    }
    if (bn) {
      out.push_back({name + ".gamma", &bn->gamma});
      out.push_back({name + ".beta", &bn->beta});
      out.push_back({name + ".rmean", &bn->rmean});
      out.push_back({name + ".rvar", &bn->rvar});
    }
  });
  if (impl_->fc) {
    out.push_back({"head.fc.w", &impl_->fc->w});
    out.push_back({"head.fc.b", &impl_->fc->b});
  }
  return out;
}

uint64_t Network::state_checksum() const {
  Fnv64 h;
  auto& self = const_cast<Network&>(*this);
  for (const StateRef& s : self.named_state()) {
    h.update(s.name);
    h.update(s.value->data.data(), s.value->data.size() * sizeof(float));
  }
  return h.value();
}

// ---------------------------------------------------------------------------
// Architecture registry and spec-level operations.

const ArchSpec* find_arch(const std::string& id) {
  static const ArchSpec resnet18 = [] {
    ArchSpec s;
    s.id = "resnet18";
    s.stem_channels = 64;
    s.stem_kernel = 7;
    s.stem_stride = 2;
    s.stem_pad = 3;
    s.pool_after_stem = true;
    s.stages = {{2, 64, 1}, {2, 128, 2}, {2, 256, 2}, {2, 512, 2}};
    return s;
  }();
  static const ArchSpec minires = [] {
    ArchSpec s;
    s.id = "minires";
    s.stem_channels = 8;
    s.stem_kernel = 3;
    s.stem_stride = 1;
    s.stem_pad = 1;
    s.pool_after_stem = false;
    s.stages = {{1, 12, 2}, {1, 16, 2}, {1, 24, 2}, {1, 32, 2}};
    return s;
  }();
  if (id == "resnet18") return &resnet18;
  if (id == "minires") return &minires;
  return nullptr;
}

std::vector<float> PyramidConfig::weights_or_default() const {
  if (!level_weights.empty()) return level_weights;
  return std::vector<float>(block_ids.size(), 1.f);
}

void PyramidConfig::validate(int max_block_id) const {
  if (block_ids.empty()) throw ConfigError("pyramid config has no block ids");
  for (std::size_t i = 0; i < block_ids.size(); ++i) {
    if (block_ids[i] < 1 || block_ids[i] > max_block_id)
      throw ConfigError("block id " + std::to_string(block_ids[i]) + " outside valid range 1.." +
                        std::to_string(max_block_id));
    if (i > 0 && block_ids[i] <= block_ids[i - 1])
      throw ConfigError("block ids must be strictly increasing");
  }
  if (!level_weights.empty()) {
    if (level_weights.size() != block_ids.size())
      throw ConfigError("got " + std::to_string(level_weights.size()) + " level weights for " +
                        std::to_string(block_ids.size()) + " blocks");
    for (float w : level_weights)
      if (!(w >= 0.f)) throw ConfigError("level weights must be non-negative");
  }
}

std::vector<std::pair<std::string, std::vector<int>>> NetworkHandle::layer_shapes() const {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  for (const StateRef& s : net->named_state()) out.emplace_back(s.name, s.value->shape);
  return out;
}

NetworkHandle make_handle_from_archive(const Archive& archive, bool frozen,
                                       const std::string& fingerprint) {
  const ArchSpec* spec = find_arch(archive.meta.arch_id);
  if (!spec) throw LoadError("unknown architecture '" + archive.meta.arch_id + "' in archive");

  NetworkHandle h;
  h.arch_id = archive.meta.arch_id;
  h.input_size = archive.meta.input_size;
  h.norm = archive.meta.norm;
  h.frozen = frozen;
  h.source_fingerprint = fingerprint;
  h.net = std::make_shared<Network>(*spec);

  std::size_t matched = 0;
  for (const StateRef& s : h.net->named_state()) {
    const Tensor* t = archive.find(s.name);
    if (!t) throw LoadError("archive is missing tensor '" + s.name + "'");
    if (t->shape != s.value->shape)
      throw LoadError("tensor '" + s.name + "' shape mismatch: archive " + shape_str(t->shape) +
                      " vs architecture " + s.value->shape_str());
    *s.value = *t;
    ++matched;
  }
  if (matched != archive.tensors.size()) {
    auto state = h.net->named_state();
    for (const auto& [name, t] : archive.tensors) {
      const bool known = std::any_of(state.begin(), state.end(),
                                     [&](const StateRef& s) { return s.name == name; });
      if (!known) throw LoadError("archive contains unexpected tensor '" + name + "'");
    }
  }
  return h;
}

NetworkHandle load_teacher(const std::filesystem::path& archive_file,
                           const PyramidConfig& config) {
  const Archive archive = Archive::load(archive_file);
  NetworkHandle h =
      make_handle_from_archive(archive, /*frozen=*/true, Archive::fingerprint(archive_file));
  config.validate(h.net->num_groups());
  return h;
}

NetworkHandle init_student(const NetworkHandle& teacher, uint64_t seed) {
  if (!teacher.net) throw UsageError("invalid teacher handle");
  NetworkHandle h;
  h.arch_id = teacher.arch_id;
  h.input_size = teacher.input_size;
  h.norm = teacher.norm;
  h.frozen = false;
  h.net = std::make_shared<Network>(teacher.net->spec());
  h.net->init_params(seed);
  return h;
}

std::vector<Tensor> extract_pyramid(const NetworkHandle& handle, const Tensor& batch,
                                    const PyramidConfig& config) {
  if (!handle.net) throw UsageError("invalid network handle");
  config.validate(handle.net->num_groups());
  if (batch.ndim() != 4)
    throw DimensionError("extract_pyramid expects [N,C,H,W], got " + batch.shape_str());
  if (batch.dim(2) != handle.input_size || batch.dim(3) != handle.input_size)
    throw DimensionError("input is " + std::to_string(batch.dim(2)) + "x" +
                         std::to_string(batch.dim(3)) + " but the handle is configured for " +
                         std::to_string(handle.input_size) + "x" +
                         std::to_string(handle.input_size));
  return handle.net->forward_pyramid(batch, config.block_ids, /*train=*/false, nullptr);
}

std::vector<std::pair<std::string, Tensor>> snapshot_state(Network& net) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const StateRef& s : net.named_state()) out.emplace_back(s.name, *s.value);
  return out;
}

void restore_state(Network& net, const std::vector<std::pair<std::string, Tensor>>& state) {
  for (const StateRef& s : net.named_state()) {
    const auto it = std::find_if(state.begin(), state.end(),
                                 [&](const auto& kv) { return kv.first == s.name; });
    if (it == state.end()) throw LoadError("state snapshot is missing tensor '" + s.name + "'");
    if (it->second.shape != s.value->shape)
      throw LoadError("state tensor '" + s.name + "' shape mismatch");
    *s.value = it->second;
  }
}

}  // namespace pyrad
