#pragma once

#include <vector>

#include "stormadapt/layers.hpp"

namespace stormadapt {

// Domain label: 1 = source, 0 = target.
struct DomainLabel {
  int value = 1;
  DomainLabel() = default;
  explicit DomainLabel(int v) : value(v) {
    if (v != 0 && v != 1) throw InputError("domain label must be 0 or 1");
  }
};

// Image-level domain classifier: two 1x1 convolutions over the backbone
// feature map; per-location sigmoids are averaged into a single probability.
struct ImageDomainClassifier {
  Conv2d c1, c2;

  struct Trace {
    Tensor input;   // feature entering the classifier (identity GRL forward)
    Tensor h1, a1;  // hidden pre/post activation
    Tensor logits;  // per-location logits
    real prob = 0;  // spatial mean of sigmoid(logits)
  };

  void init(int in_ch, int hidden, Rng& rng);
  real predict(const Tensor& features, Trace& trace);
  // dprob = dL/dP; accumulates weight grads and trace.input.grad.
  void backward(Trace& trace, real dprob);
  void collect(std::vector<NamedParam>& out, const std::string& prefix);
};

// Object-level domain classifier: three fully connected layers over a pooled
// proposal feature, sigmoid output.
struct ObjectDomainClassifier {
  Linear l1, l2, l3;

  struct Trace {
    Tensor input;
    Tensor h1, a1, h2, a2, logit;
    real prob = 0;
  };

  void init(int in_dim, int hidden, Rng& rng);
  real predict(const Tensor& pooled, Trace& trace);
  void backward(Trace& trace, real dprob);
  void collect(std::vector<NamedParam>& out, const std::string& prefix);
};

// Sum-over-batch BCE of image-level probabilities (one per image).
// dprobs, when non-null, receives dL/dP_i.
real img_domain_loss(const std::vector<real>& probs,
                     const std::vector<DomainLabel>& labels,
                     std::vector<real>* dprobs = nullptr);

// Double-sum BCE over per-proposal probabilities; every proposal inherits its
// image's domain label. Empty input returns 0 and logs a warning.
real obj_domain_loss(const std::vector<real>& probs,
                     const std::vector<DomainLabel>& labels,
                     std::vector<real>* dprobs = nullptr);

}  // namespace stormadapt
