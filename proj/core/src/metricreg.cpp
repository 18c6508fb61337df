#include "stormadapt/metricreg.hpp"

#include <cmath>
#include <cstdio>

namespace stormadapt {

namespace {

constexpr real kDistEps = 1e-12;

// d = ||a-b|| / sqrt(n); when requested, accumulates scale * dd/d(a,b).
real distance_with_grad(Tensor& a, Tensor& b, real scale, bool with_grad) {
  if (!same_shape(a, b))
    throw InputError("feature_distance: shape mismatch");
  const real n = static_cast<real>(a.size());
  real ss = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const real diff = a.data[i] - b.data[i];
    ss += diff * diff;
  }
  const real d = std::sqrt(ss / n);
  if (with_grad && d > kDistEps) {
    const real k = scale / (n * d);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const real diff = a.data[i] - b.data[i];
      a.grad[i] += k * diff;
      b.grad[i] -= k * diff;
    }
  }
  return d;
}

}  // namespace

real feature_distance(const Tensor& a, const Tensor& b) {
  return distance_with_grad(const_cast<Tensor&>(a), const_cast<Tensor&>(b),
                            0, false);
}

real img_triplet_loss(Tensor& src, Tensor& tgt, Tensor& aux, real delta,
                      bool with_grad) {
  if (!(delta > 0)) throw InputError("triplet loss: delta must be > 0");
  const real d_st = feature_distance(src, tgt);
  const real d_sa = feature_distance(src, aux);
  const real hinge = d_st - d_sa + delta;
  if (hinge <= 0) return 0;
  if (with_grad) {
    distance_with_grad(src, tgt, 1.0, true);
    distance_with_grad(src, aux, -1.0, true);
  }
  return hinge;
}

real obj_triplet_loss(std::vector<Tensor>& src, std::vector<Tensor>& tgt,
                      std::vector<Tensor>& aux, real delta, bool with_grad) {
  if (src.size() != tgt.size() || src.size() != aux.size())
    throw InputError("obj_triplet_loss: triplet member counts differ");
  if (src.empty()) {
    std::fprintf(stderr, "warning: obj_triplet_loss on empty proposal set\n");
    return 0;
  }
  const real inv_m = 1.0 / static_cast<real>(src.size());
  real total = 0;
  for (std::size_t j = 0; j < src.size(); ++j) {
    const real d_st = feature_distance(src[j], tgt[j]);
    const real d_sa = feature_distance(src[j], aux[j]);
    const real hinge = d_st - d_sa + delta;
    if (hinge <= 0) continue;
    total += hinge;
    if (with_grad) {
      distance_with_grad(src[j], tgt[j], inv_m, true);
      distance_with_grad(src[j], aux[j], -inv_m, true);
    }
  }
  return total * inv_m;
}

real ordering_rate(const std::vector<TripletDistances>& batch) {
  if (batch.empty()) throw InputError("ordering_rate: empty batch");
  std::size_t satisfied = 0;
  for (const auto& t : batch)
    if (t.d_st < t.d_sa) ++satisfied;
  return static_cast<real>(satisfied) / static_cast<real>(batch.size());
}

}  // namespace stormadapt
