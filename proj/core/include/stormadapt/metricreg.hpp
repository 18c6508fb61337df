#pragma once

#include <vector>

#include "stormadapt/tensor.hpp"

namespace stormadapt {

// Domain-level metric regularization: hinge losses pulling the source-target
// feature distance under the source-auxiliary distance by a margin.

// Normalized L2: ||a - b||_2 / sqrt(element count).
real feature_distance(const Tensor& a, const Tensor& b);

// max(d(S,T) - d(S,A) + delta, 0) at image level. When with_grad is set the
// hinge subgradient is accumulated into the .grad buffers of all three
// feature tensors.
real img_triplet_loss(Tensor& src, Tensor& tgt, Tensor& aux, real delta,
                      bool with_grad = false);

// Mean of the per-proposal hinge over aligned object features. Empty input
// returns 0 with a warning.
real obj_triplet_loss(std::vector<Tensor>& src, std::vector<Tensor>& tgt,
                      std::vector<Tensor>& aux, real delta,
                      bool with_grad = false);

// Diagnostic: fraction of triplets with d(S,T) strictly below d(S,A).
struct TripletDistances {
  real d_st = 0;
  real d_sa = 0;
};
real ordering_rate(const std::vector<TripletDistances>& batch);

}  // namespace stormadapt
