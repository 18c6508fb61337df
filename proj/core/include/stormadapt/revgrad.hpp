#pragma once

#include "stormadapt/tensor.hpp"

namespace stormadapt {

// Gradient reversal: identity forward, -lambda * gradient backward. The
// adversarial variant scales lambda by how confidently the domain classifier
// separates the current batch (small loss -> hard example -> large lambda).
struct AdvGrlConfig {
  real lambda0 = 1.0;  // base reversal strength
  real alpha = 0.63;   // hardness threshold on the classifier loss
  real beta = 30.0;    // overflow clamp on lambda

  void validate() const;
};

// Forward pass of the reversal layer: plain identity.
Tensor grl_forward(const Tensor& v);

// downstream = -lambda * upstream, elementwise.
void grl_backward(const Tensor& upstream_grad, real lambda,
                  Tensor& downstream_grad);

// Piecewise hardness-adaptive lambda. classifier_loss is treated as a
// detached scalar; no gradient flows through the returned value.
// classifier_loss == 0 returns beta (the clamp limit) rather than faulting.
real advgrl_lambda(real classifier_loss, const AdvGrlConfig& cfg);

void advgrl_backward(const Tensor& upstream_grad, real classifier_loss,
                     const AdvGrlConfig& cfg, Tensor& downstream_grad);

}  // namespace stormadapt
