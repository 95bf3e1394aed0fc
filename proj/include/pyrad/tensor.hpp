#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pyrad {

// Dense float32 array, row-major. Feature maps and batches use NCHW order;
// a single feature map is [C,H,W], an anomaly grid is [H,W].
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, float fill);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }

  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  // NCHW accessors; bounds are the caller's problem.
  float& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float& at3(int c, int h, int w) {
    return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  float at3(int c, int h, int w) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  float& at2(int h, int w) { return data[static_cast<std::size_t>(h) * shape[1] + w]; }
  float at2(int h, int w) const { return data[static_cast<std::size_t>(h) * shape[1] + w]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;

  bool all_finite() const;
  float min_value() const;
  float max_value() const;
};

std::size_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Copies image n of a [N,C,H,W] batch into a standalone [C,H,W] tensor.
Tensor image_slice(const Tensor& batch, int n);

// Stacks equal-shaped [C,H,W] tensors into one [N,C,H,W] batch.
Tensor stack_images(const std::vector<Tensor>& images, const std::vector<int>& order, int begin,
                    int end);

}  // namespace pyrad
