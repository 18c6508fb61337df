#include "stormadapt/layers.hpp"

#include <algorithm>
#include <cmath>

namespace stormadapt {

void Conv2d::init(int in_channels, int out_channels, int k, int s, int p,
                  Rng& rng) {
  in_ch = in_channels;
  out_ch = out_channels;
  ksize = k;
  stride = s;
  pad = p;
  w.reshape({out_ch, in_ch, ksize, ksize});
  b.reshape({out_ch});
  const real stddev = std::sqrt(2.0 / (in_ch * ksize * ksize));
  std::normal_distribution<real> dist(0.0, stddev);
  for (auto& v : w.data) v = dist(rng);
}

Tensor Conv2d::forward(const Tensor& x) const {
  const int h = x.dim(1), wd = x.dim(2);
  const int oh = (h + 2 * pad - ksize) / stride + 1;
  const int ow = (wd + 2 * pad - ksize) / stride + 1;
  Tensor y({out_ch, oh, ow});
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        real acc = b[oc];
        const int y0 = oy * stride - pad, x0 = ox * stride - pad;
        for (int ic = 0; ic < in_ch; ++ic) {
          for (int ky = 0; ky < ksize; ++ky) {
            const int iy = y0 + ky;
            if (iy < 0 || iy >= h) continue;
            const std::size_t wrow =
                ((static_cast<std::size_t>(oc) * in_ch + ic) * ksize + ky) *
                ksize;
            const std::size_t xrow =
                (static_cast<std::size_t>(ic) * h + iy) * wd;
            for (int kx = 0; kx < ksize; ++kx) {
              const int ix = x0 + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += w.data[wrow + kx] * x.data[xrow + ix];
            }
          }
        }
        y.at(oc, oy, ox) = acc;
      }
    }
  }
  return y;
}

void Conv2d::backward(Tensor& x, const Tensor& y) {
  const int h = x.dim(1), wd = x.dim(2);
  const int oh = y.dim(1), ow = y.dim(2);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const real g =
            y.grad[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
        if (g == 0) continue;
        b.grad[oc] += g;
        const int y0 = oy * stride - pad, x0 = ox * stride - pad;
        for (int ic = 0; ic < in_ch; ++ic) {
          for (int ky = 0; ky < ksize; ++ky) {
            const int iy = y0 + ky;
            if (iy < 0 || iy >= h) continue;
            const std::size_t wrow =
                ((static_cast<std::size_t>(oc) * in_ch + ic) * ksize + ky) *
                ksize;
            const std::size_t xrow =
                (static_cast<std::size_t>(ic) * h + iy) * wd;
            for (int kx = 0; kx < ksize; ++kx) {
              const int ix = x0 + kx;
              if (ix < 0 || ix >= wd) continue;
              w.grad[wrow + kx] += g * x.data[xrow + ix];
              x.grad[xrow + ix] += g * w.data[wrow + kx];
            }
          }
        }
      }
    }
  }
}

void Conv2d::collect(std::vector<NamedParam>& out, const std::string& prefix) {
  out.push_back({prefix + ".w", &w});
  out.push_back({prefix + ".b", &b});
}

void Linear::init(int in, int out, Rng& rng) {
  in_dim = in;
  out_dim = out;
  w.reshape({out_dim, in_dim});
  b.reshape({out_dim});
  const real stddev = std::sqrt(2.0 / in_dim);
  std::normal_distribution<real> dist(0.0, stddev);
  for (auto& v : w.data) v = dist(rng);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y({out_dim});
  for (int o = 0; o < out_dim; ++o) {
    real acc = b[o];
    const std::size_t row = static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += w.data[row + i] * x.data[i];
    y[o] = acc;
  }
  return y;
}

void Linear::backward(Tensor& x, const Tensor& y) {
  for (int o = 0; o < out_dim; ++o) {
    const real g = y.grad[o];
    if (g == 0) continue;
    b.grad[o] += g;
    const std::size_t row = static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      w.grad[row + i] += g * x.data[i];
      x.grad[i] += g * w.data[row + i];
    }
  }
}

void Linear::collect(std::vector<NamedParam>& out, const std::string& prefix) {
  out.push_back({prefix + ".w", &w});
  out.push_back({prefix + ".b", &b});
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y.data[i] = x.data[i] > 0 ? x.data[i] : 0;
  return y;
}

void relu_backward(Tensor& x, const Tensor& y) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data[i] > 0) x.grad[i] += y.grad[i];
}

real bce_prob(real p, real label, real* dp) {
  const real pc = std::clamp(p, kProbEps, 1.0 - kProbEps);
  const real loss = -(label * std::log(pc) + (1 - label) * std::log(1 - pc));
  if (dp) {
    // Gradient of the clamped form; zero outside the clamp window.
    *dp = (p > kProbEps && p < 1.0 - kProbEps)
              ? (-label / pc + (1 - label) / (1 - pc))
              : 0.0;
  }
  return loss;
}

real bce_logit(real z, real label, real* dz) {
  // log(1+exp(-|z|)) + max(z,0) - z*label
  const real loss = std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) -
                    z * label;
  if (dz) *dz = sigmoid(z) - label;
  return loss;
}

real softmax_ce(const std::vector<real>& logits, int label,
                std::vector<real>* dlogits) {
  const real zmax = *std::max_element(logits.begin(), logits.end());
  real denom = 0;
  for (real z : logits) denom += std::exp(z - zmax);
  const real log_denom = std::log(denom) + zmax;
  const real loss = log_denom - logits[static_cast<std::size_t>(label)];
  if (dlogits) {
    dlogits->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      (*dlogits)[i] = std::exp(logits[i] - log_denom) -
                      (static_cast<int>(i) == label ? 1.0 : 0.0);
    }
  }
  return loss;
}

real smooth_l1(real x, real* dx) {
  const real ax = std::abs(x);
  if (ax < 1.0) {
    if (dx) *dx = x;
    return 0.5 * x * x;
  }
  if (dx) *dx = x > 0 ? 1.0 : -1.0;
  return ax - 0.5;
}

}  // namespace stormadapt
