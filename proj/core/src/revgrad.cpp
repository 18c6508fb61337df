#include "stormadapt/revgrad.hpp"

#include <algorithm>

namespace stormadapt {

void AdvGrlConfig::validate() const {
  if (!(lambda0 > 0)) throw InputError("advgrl: lambda0 must be > 0");
  if (!(alpha >= 0)) throw InputError("advgrl: alpha must be >= 0");
  if (!(beta >= lambda0)) throw InputError("advgrl: beta must be >= lambda0");
}

Tensor grl_forward(const Tensor& v) { return v; }

void grl_backward(const Tensor& upstream_grad, real lambda,
                  Tensor& downstream_grad) {
  if (!same_shape(upstream_grad, downstream_grad))
    throw InputError("grl_backward: gradient shape mismatch");
  for (std::size_t i = 0; i < upstream_grad.size(); ++i)
    downstream_grad.grad[i] += -lambda * upstream_grad.grad[i];
}

real advgrl_lambda(real classifier_loss, const AdvGrlConfig& cfg) {
  if (classifier_loss < 0)
    throw InputError("advgrl_lambda: classifier loss must be >= 0");
  if (classifier_loss < cfg.alpha) {
    if (classifier_loss == 0) return cfg.beta;
    return std::min(cfg.lambda0 / classifier_loss, cfg.beta);
  }
  return cfg.lambda0;
}

void advgrl_backward(const Tensor& upstream_grad, real classifier_loss,
                     const AdvGrlConfig& cfg, Tensor& downstream_grad) {
  grl_backward(upstream_grad, advgrl_lambda(classifier_loss, cfg),
               downstream_grad);
}

}  // namespace stormadapt
