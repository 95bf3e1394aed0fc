#include "pyrad/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "pyrad/error.hpp"

namespace pyrad {

std::size_t numel_of(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.f) {}

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

std::string Tensor::shape_str() const { return pyrad::shape_str(shape); }

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

float Tensor::min_value() const {
  float m = std::numeric_limits<float>::infinity();
  for (float v : data) m = std::min(m, v);
  return m;
}

float Tensor::max_value() const {
  float m = -std::numeric_limits<float>::infinity();
  for (float v : data) m = std::max(m, v);
  return m;
}

Tensor image_slice(const Tensor& batch, int n) {
  if (batch.ndim() != 4) throw DimensionError("image_slice expects [N,C,H,W], got " + batch.shape_str());
  const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor out({C, H, W});
  const std::size_t stride = static_cast<std::size_t>(C) * H * W;
  std::copy_n(batch.ptr() + stride * n, stride, out.ptr());
  return out;
}

Tensor stack_images(const std::vector<Tensor>& images, const std::vector<int>& order, int begin,
                    int end) {
  if (begin >= end) throw UsageError("stack_images: empty range");
  const Tensor& first = images[static_cast<size_t>(order[static_cast<size_t>(begin)])];
  if (first.ndim() != 3) throw DimensionError("stack_images expects [C,H,W] items");
  Tensor out({end - begin, first.dim(0), first.dim(1), first.dim(2)});
  const std::size_t stride = first.numel();
  for (int i = begin; i < end; ++i) {
    const Tensor& img = images[static_cast<size_t>(order[static_cast<size_t>(i)])];
    if (!img.same_shape(first))
      throw DimensionError("stack_images: mixed shapes " + first.shape_str() + " vs " + img.shape_str());
    std::copy_n(img.ptr(), stride, out.ptr() + stride * static_cast<std::size_t>(i - begin));
  }
  return out;
}

}  // namespace pyrad
