#pragma once

#include <string>
#include <vector>

#include "stormadapt/tensor.hpp"

namespace stormadapt {

// Gradients travel in Tensor::grad: forward(x) -> y, the caller fills y.grad,
// then backward(x, y) accumulates into x.grad and the layer's weight grads.

struct NamedParam {
  std::string name;
  Tensor* value;
};

struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  Tensor w;  // [out_ch, in_ch, k, k]
  Tensor b;  // [out_ch]

  void init(int in_channels, int out_channels, int k, int s, int p, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void backward(Tensor& x, const Tensor& y);
  void collect(std::vector<NamedParam>& out, const std::string& prefix);
};

struct Linear {
  int in_dim = 0, out_dim = 0;
  Tensor w;  // [out_dim, in_dim]
  Tensor b;  // [out_dim]

  void init(int in, int out, Rng& rng);
  Tensor forward(const Tensor& x) const;  // x flattened to in_dim
  void backward(Tensor& x, const Tensor& y);
  void collect(std::vector<NamedParam>& out, const std::string& prefix);
};

Tensor relu_forward(const Tensor& x);
void relu_backward(Tensor& x, const Tensor& y);

inline real sigmoid(real z) { return 1.0 / (1.0 + std::exp(-z)); }

// Binary cross entropy on a probability already in (0,1); p clamped to
// [eps, 1-eps] so the loss stays finite. Returns loss; *dp gets dL/dp.
real bce_prob(real p, real label, real* dp);

// Numerically stable BCE on a logit. Returns loss; *dz gets dL/dz.
real bce_logit(real z, real label, real* dz);

// Softmax cross entropy over a logit vector. Returns loss and writes dL/dz.
real softmax_ce(const std::vector<real>& logits, int label,
                std::vector<real>* dlogits);

// Elementwise smooth-L1 (Huber, delta=1). Returns loss; *dx gets dL/dx.
real smooth_l1(real x, real* dx);

constexpr real kProbEps = 1e-7;

}  // namespace stormadapt
