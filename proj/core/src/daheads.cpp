#include "stormadapt/daheads.hpp"

#include <cstdio>

namespace stormadapt {

void ImageDomainClassifier::init(int in_ch, int hidden, Rng& rng) {
  c1.init(in_ch, hidden, 1, 1, 0, rng);
  c2.init(hidden, 1, 1, 1, 0, rng);
}

real ImageDomainClassifier::predict(const Tensor& features, Trace& trace) {
  trace.input = features;
  trace.input.zero_grad();
  trace.h1 = c1.forward(trace.input);
  trace.a1 = relu_forward(trace.h1);
  trace.logits = c2.forward(trace.a1);
  real acc = 0;
  for (real z : trace.logits.data) acc += sigmoid(z);
  trace.prob = acc / static_cast<real>(trace.logits.size());
  return trace.prob;
}

void ImageDomainClassifier::backward(Trace& trace, real dprob) {
  const real scale = dprob / static_cast<real>(trace.logits.size());
  for (std::size_t i = 0; i < trace.logits.size(); ++i) {
    const real s = sigmoid(trace.logits.data[i]);
    trace.logits.grad[i] = scale * s * (1 - s);
  }
  c2.backward(trace.a1, trace.logits);
  relu_backward(trace.h1, trace.a1);
  c1.backward(trace.input, trace.h1);
}

void ImageDomainClassifier::collect(std::vector<NamedParam>& out,
                                    const std::string& prefix) {
  c1.collect(out, prefix + ".c1");
  c2.collect(out, prefix + ".c2");
}

void ObjectDomainClassifier::init(int in_dim, int hidden, Rng& rng) {
  l1.init(in_dim, hidden, rng);
  l2.init(hidden, hidden, rng);
  l3.init(hidden, 1, rng);
}

real ObjectDomainClassifier::predict(const Tensor& pooled, Trace& trace) {
  trace.input = pooled;
  trace.input.zero_grad();
  trace.h1 = l1.forward(trace.input);
  trace.a1 = relu_forward(trace.h1);
  trace.h2 = l2.forward(trace.a1);
  trace.a2 = relu_forward(trace.h2);
  trace.logit = l3.forward(trace.a2);
  trace.prob = sigmoid(trace.logit[0]);
  return trace.prob;
}

void ObjectDomainClassifier::backward(Trace& trace, real dprob) {
  const real s = trace.prob;
  trace.logit.grad[0] = dprob * s * (1 - s);
  l3.backward(trace.a2, trace.logit);
  relu_backward(trace.h2, trace.a2);
  l2.backward(trace.a1, trace.h2);
  relu_backward(trace.h1, trace.a1);
  l1.backward(trace.input, trace.h1);
}

void ObjectDomainClassifier::collect(std::vector<NamedParam>& out,
                                     const std::string& prefix) {
  l1.collect(out, prefix + ".l1");
  l2.collect(out, prefix + ".l2");
  l3.collect(out, prefix + ".l3");
}

real img_domain_loss(const std::vector<real>& probs,
                     const std::vector<DomainLabel>& labels,
                     std::vector<real>* dprobs) {
  if (probs.size() != labels.size())
    throw InputError("img_domain_loss: probs/labels size mismatch");
  if (dprobs) dprobs->assign(probs.size(), 0);
  real loss = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    real dp = 0;
    loss += bce_prob(probs[i], static_cast<real>(labels[i].value), &dp);
    if (dprobs) (*dprobs)[i] = dp;
  }
  return loss;
}

real obj_domain_loss(const std::vector<real>& probs,
                     const std::vector<DomainLabel>& labels,
                     std::vector<real>* dprobs) {
  if (probs.empty()) {
    std::fprintf(stderr, "warning: obj_domain_loss on empty proposal set\n");
    if (dprobs) dprobs->clear();
    return 0;
  }
  return img_domain_loss(probs, labels, dprobs);
}

}  // namespace stormadapt
