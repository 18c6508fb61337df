#include <cmath>

#include "doctest.h"
#include "stormadapt/layers.hpp"

using namespace stormadapt;

namespace {

// Central finite difference of a scalar function of one tensor element.
template <typename F>
real fd(Tensor& t, std::size_t i, F loss, real eps = 1e-6) {
  const real saved = t.data[i];
  t.data[i] = saved + eps;
  const real up = loss();
  t.data[i] = saved - eps;
  const real down = loss();
  t.data[i] = saved;
  return (up - down) / (2 * eps);
}

real rel_err(real a, real b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), real(1e-8)});
}

}  // namespace

TEST_CASE("tensor reshape and indexing") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.dim(0) == 2);
  t.at(1, 2, 3) = 7;
  CHECK(t.data[23] == 7);
  t.fill(2);
  t.grad[0] = 5;
  t.zero_grad();
  CHECK(t.grad[0] == 0);
  CHECK(t.data[0] == 2);
  CHECK(same_shape(t, Tensor({2, 3, 4})));
  CHECK(!same_shape(t, Tensor({2, 3, 5})));
}

TEST_CASE("bce closed forms") {
  real dp = 0;
  CHECK(bce_prob(0.5, 1.0, &dp) == doctest::Approx(std::log(2)).epsilon(1e-12));
  CHECK(dp == doctest::Approx(-2.0));
  // clamped endpoints stay finite
  CHECK(std::isfinite(bce_prob(0.0, 1.0, nullptr)));
  CHECK(std::isfinite(bce_prob(1.0, 0.0, nullptr)));

  real dz = 0;
  CHECK(bce_logit(0.0, 1.0, &dz) == doctest::Approx(std::log(2)));
  CHECK(dz == doctest::Approx(-0.5));
  // matches bce_prob(sigmoid(z)) on random values
  Rng rng(7);
  std::uniform_real_distribution<real> u(-5, 5);
  for (int i = 0; i < 50; ++i) {
    const real z = u(rng);
    const real label = i % 2;
    CHECK(bce_logit(z, label, nullptr) ==
          doctest::Approx(bce_prob(sigmoid(z), label, nullptr)).epsilon(1e-9));
  }
}

TEST_CASE("softmax cross entropy gradient vs finite differences") {
  Rng rng(11);
  std::normal_distribution<real> g(0, 1);
  std::vector<real> logits(5);
  for (auto& v : logits) v = g(rng);
  std::vector<real> dl;
  softmax_ce(logits, 2, &dl);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const real eps = 1e-6;
    auto at = [&](real delta) {
      std::vector<real> z = logits;
      z[i] += delta;
      return softmax_ce(z, 2, nullptr);
    };
    CHECK(rel_err(dl[i], (at(eps) - at(-eps)) / (2 * eps)) < 1e-6);
  }
}

TEST_CASE("smooth l1 hand values") {
  real dx = 0;
  CHECK(smooth_l1(0.5, &dx) == doctest::Approx(0.125));
  CHECK(dx == doctest::Approx(0.5));
  CHECK(smooth_l1(2.0, &dx) == doctest::Approx(1.5));
  CHECK(dx == doctest::Approx(1.0));
  CHECK(smooth_l1(-3.0, &dx) == doctest::Approx(2.5));
  CHECK(dx == doctest::Approx(-1.0));
}

TEST_CASE("conv2d gradients vs finite differences") {
  Rng rng(3);
  Conv2d conv;
  conv.init(2, 3, 3, 1, 1, rng);
  Tensor x({2, 5, 5});
  std::normal_distribution<real> g(0, 1);
  for (auto& v : x.data) v = g(rng);

  auto loss = [&]() {
    const Tensor y = conv.forward(x);
    real s = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      s += 0.5 * y.data[i] * y.data[i];
    return s;
  };

  Tensor y = conv.forward(x);
  for (std::size_t i = 0; i < y.size(); ++i) y.grad[i] = y.data[i];
  conv.backward(x, y);

  for (std::size_t i : {std::size_t(0), x.size() / 2, x.size() - 1})
    CHECK(rel_err(x.grad[i], fd(x, i, loss)) < 1e-5);
  for (std::size_t i : {std::size_t(0), conv.w.size() / 2, conv.w.size() - 1})
    CHECK(rel_err(conv.w.grad[i], fd(conv.w, i, loss)) < 1e-5);
  CHECK(rel_err(conv.b.grad[0], fd(conv.b, 0, loss)) < 1e-5);
}

TEST_CASE("strided conv2d gradients vs finite differences") {
  Rng rng(5);
  Conv2d conv;
  conv.init(3, 4, 3, 2, 1, rng);
  Tensor x({3, 8, 8});
  std::normal_distribution<real> g(0, 1);
  for (auto& v : x.data) v = g(rng);

  auto loss = [&]() {
    const Tensor y = conv.forward(x);
    real s = 0;
    for (real v : y.data) s += std::sin(v);
    return s;
  };
  Tensor y = conv.forward(x);
  CHECK(y.dim(1) == 4);
  for (std::size_t i = 0; i < y.size(); ++i) y.grad[i] = std::cos(y.data[i]);
  conv.backward(x, y);
  for (std::size_t i : {std::size_t(1), x.size() / 3, x.size() - 2})
    CHECK(rel_err(x.grad[i], fd(x, i, loss)) < 1e-5);
  for (std::size_t i : {std::size_t(2), conv.w.size() / 2})
    CHECK(rel_err(conv.w.grad[i], fd(conv.w, i, loss)) < 1e-5);
}

TEST_CASE("linear gradients vs finite differences") {
  Rng rng(9);
  Linear lin;
  lin.init(6, 4, rng);
  Tensor x({6});
  std::normal_distribution<real> g(0, 1);
  for (auto& v : x.data) v = g(rng);

  auto loss = [&]() {
    const Tensor y = lin.forward(x);
    real s = 0;
    for (real v : y.data) s += v * v * v / 3;
    return s;
  };
  Tensor y = lin.forward(x);
  for (std::size_t i = 0; i < y.size(); ++i) y.grad[i] = y.data[i] * y.data[i];
  lin.backward(x, y);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(rel_err(x.grad[i], fd(x, i, loss)) < 1e-5);
  for (std::size_t i = 0; i < lin.w.size(); ++i)
    CHECK(rel_err(lin.w.grad[i], fd(lin.w, i, loss)) < 1e-5);
}

TEST_CASE("relu forward and backward") {
  Tensor x({4});
  x.data = {-1, 0, 2, -3};
  Tensor y = relu_forward(x);
  CHECK(y.data == std::vector<real>{0, 0, 2, 0});
  y.grad = {1, 1, 1, 1};
  relu_backward(x, y);
  CHECK(x.grad == std::vector<real>{0, 0, 1, 0});
}
