#include "stormadapt/tensor.hpp"

namespace stormadapt {

bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

}  // namespace stormadapt
