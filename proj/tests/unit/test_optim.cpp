#include <cmath>

#include "doctest.h"
#include "pathtext/errors.hpp"
#include "pathtext/ops.hpp"
#include "pathtext/optim.hpp"
#include "pathtext/tape.hpp"
#include "pathtext/tensor.hpp"

using namespace pathtext;
using namespace pathtext::ad;

namespace {

// (p - 3)^2 as a taped scalar.
Tensor parabola(const Tensor& p) {
  Tensor d = sub(p, Tensor::scalar(3.0));
  return mul(d, d);
}

}  // namespace

TEST_SUITE_BEGIN("optim");

TEST_CASE("sgd single step: p=1, g=2, lr=0.1 lands on 0.8") {
  ParamMap params;
  params.emplace("p", Tensor::param({1}, {1.0}));
  params.at("p").grad_buffer()[0] = 2.0;
  Sgd opt(0.1);
  opt.step(params);
  CHECK(params.at("p").data()[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("sgd drives a parabola to its minimum") {
  ParamMap params;
  params.emplace("p", Tensor::param({1}, {-4.0}));
  Sgd opt(0.1);
  for (int i = 0; i < 200; ++i) {
    zero_grads(params);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = parabola(params.at("p"));
    backward(loss);
    opt.step(params);
  }
  CHECK(std::abs(params.at("p").data()[0] - 3.0) < 1e-6);
}

TEST_CASE("adam first step matches the closed form") {
  // With bias correction, step one moves by exactly lr * g / (|g| + eps).
  const double g = 100.0, lr = 1e-3, eps = 1e-8;
  ParamMap params;
  params.emplace("p", Tensor::param({1}, {0.0}));
  params.at("p").grad_buffer()[0] = g;
  Adam opt(lr);
  opt.step(params);
  const double expected = -lr * g / (std::abs(g) + eps);
  CHECK(std::abs(params.at("p").data()[0] - expected) < 1e-12);
}

TEST_CASE("adam second step matches hand-rolled moments") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g1 = 2.0, g2 = -1.0;
  ParamMap params;
  params.emplace("p", Tensor::param({1}, {0.5}));
  Adam opt(lr, b1, b2, eps);

  params.at("p").grad_buffer()[0] = g1;
  opt.step(params);
  zero_grads(params);
  params.at("p").grad_buffer()[0] = g2;
  opt.step(params);

  double m = 0.0, v = 0.0, p = 0.5;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  CHECK(params.at("p").data()[0] == doctest::Approx(p).epsilon(1e-15));
  CHECK(opt.t == 2);
}

TEST_CASE("adam drives a parabola to its minimum") {
  ParamMap params;
  params.emplace("p", Tensor::param({1}, {-4.0}));
  Adam opt(0.05);
  for (int i = 0; i < 500; ++i) {
    zero_grads(params);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = parabola(params.at("p"));
    backward(loss);
    opt.step(params);
  }
  CHECK(std::abs(params.at("p").data()[0] - 3.0) < 1e-3);
}

TEST_CASE("optimizers leave parameters without gradients alone") {
  ParamMap params;
  params.emplace("hot", Tensor::param({1}, {1.0}));
  params.emplace("cold", Tensor::param({1}, {1.0}));
  params.at("hot").grad_buffer()[0] = 1.0;
  Sgd sgd(0.5);
  sgd.step(params);
  CHECK(params.at("hot").data()[0] == 0.5);
  CHECK(params.at("cold").data()[0] == 1.0);

  Adam adam(0.5);
  adam.step(params);
  CHECK(params.at("cold").data()[0] == 1.0);
  CHECK(adam.m.count("cold") == 0);
}

TEST_CASE("global norm clipping rescales to the threshold") {
  ParamMap params;
  params.emplace("a", Tensor::param({1}, {0.0}));
  params.emplace("b", Tensor::param({1}, {0.0}));
  params.at("a").grad_buffer()[0] = 6.0;
  params.at("b").grad_buffer()[0] = 8.0;
  const double norm = clip_global_norm(params, 5.0);
  CHECK(norm == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(params.at("a").grad()[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(params.at("b").grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("global norm clipping is a no-op under the threshold") {
  ParamMap params;
  params.emplace("a", Tensor::param({1}, {0.0}));
  params.at("a").grad_buffer()[0] = 3.0;
  const double norm = clip_global_norm(params, 5.0);
  CHECK(norm == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(params.at("a").grad()[0] == 3.0);
}

TEST_CASE("noam schedule value and shape") {
  // d_model^-0.5 * min(s^-0.5, s * warmup^-1.5) at s=10, d=96, w=100.
  CHECK(noam_lr(10, 96, 100) == doctest::Approx(0.0010206207261596577).epsilon(1e-14));
  CHECK(noam_lr(100, 96, 100) == doctest::Approx(0.010206207261596576).epsilon(1e-14));

  // Rises during warmup, peaks at s=warmup, decays afterwards.
  CHECK(noam_lr(99, 96, 100) < noam_lr(100, 96, 100));
  CHECK(noam_lr(101, 96, 100) < noam_lr(100, 96, 100));
  for (int s = 1; s < 100; ++s) CHECK(noam_lr(s, 96, 100) < noam_lr(s + 1, 96, 100));
  for (int s = 100; s < 300; ++s) CHECK(noam_lr(s, 96, 100) >= noam_lr(s + 1, 96, 100));

  CHECK_THROWS_AS(noam_lr(0, 96, 100), InvalidStep);
  CHECK_THROWS_AS(noam_lr(-5, 96, 100), InvalidStep);
}

TEST_SUITE_END();
