#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

#include "stormadapt/common.hpp"

namespace stormadapt {

// Dense row-major tensor with a paired gradient buffer. Layers cache their
// inputs explicitly, caffe-style; there is no tape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) { reshape(std::move(shape)); }

  void reshape(std::vector<int> shape) {
    shape_ = std::move(shape);
    std::size_t n = 1;
    for (int d : shape_) n *= static_cast<std::size_t>(d);
    data.assign(n, 0);
    grad.assign(n, 0);
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data.size(); }

  real* ptr() { return data.data(); }
  const real* ptr() const { return data.data(); }

  real& operator[](std::size_t i) { return data[i]; }
  real operator[](std::size_t i) const { return data[i]; }

  // CHW indexing for 3-d tensors.
  real& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  real at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  real& gat(int c, int y, int x) {
    return grad[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0); }
  void fill(real v) { std::fill(data.begin(), data.end(), v); }

  std::vector<real> data;
  std::vector<real> grad;

 private:
  std::vector<int> shape_;
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace stormadapt
