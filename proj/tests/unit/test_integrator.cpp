#include <doctest.h>

#include <cmath>
#include <random>

#include "integral_action/integrator.hpp"
#include "oracles.hpp"

using namespace integral_action;

TEST_CASE("integrate at the gate extremes selects one stream") {
  std::mt19937_64 rng(1);
  const auto a = oracle::random_tensor(rng, {5, 12});
  const auto p = oracle::random_tensor(rng, {5, 12});
  const Tensor<double> lo({5, 12}, kGateEpsilon), hi({5, 12}, 1.0 - kGateEpsilon);
  const auto fl = integrate(a, p, lo), fh = integrate(a, p, hi);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(fl[i] - p[i]) <= 1e-5);
    CHECK(std::abs(fh[i] - a[i]) <= 1e-5);
  }
}

TEST_CASE("integrate is a convex combination") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_tensor(rng, {4, 9});
    const auto p = oracle::random_tensor(rng, {4, 9});
    Tensor<double> g({4, 9});
    for (auto& v : g.values()) v = u(rng);
    const auto f = integrate(a, p, g);
    for (std::size_t i = 0; i < f.size(); ++i) {
      CHECK(f[i] >= std::min(a[i], p[i]) - 1e-12);
      CHECK(f[i] <= std::max(a[i], p[i]) + 1e-12);
      CHECK(f[i] == doctest::Approx(g[i] * a[i] + (1.0 - g[i]) * p[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gate regulariser values and gradient") {
  const Tensor<double> half({3, 4}, 0.5);
  CHECK(std::abs(gate_regularizer(half) - std::log(2.0)) <= 1e-9);
  const Tensor<double> zero({3, 4}, 0.0);
  CHECK(gate_regularizer(zero) == 0.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Tensor<double> g({3, 4});
  for (auto& v : g.values()) v = u(rng);
  const auto grad = gate_regularizer_grad(g);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(grad[i] == doctest::Approx(1.0 / ((1.0 - g[i]) * 12.0)));
  auto targets = std::vector<std::pair<std::string, std::pair<Tensor<double>*, const Tensor<double>*>>>{
      {"gate", {&g, &grad}}};
  CHECK(oracle::check_gradients(targets, [&] { return gate_regularizer(g); }).max_rel < 1e-7);
}

TEST_CASE("integrate_backward matches finite differences") {
  std::mt19937_64 rng(4);
  auto a = oracle::random_tensor(rng, {3, 6});
  auto p = oracle::random_tensor(rng, {3, 6});
  Tensor<double> g({3, 6});
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (auto& v : g.values()) v = u(rng);
  const auto w = oracle::random_tensor(rng, {3, 6});
  const auto grads = integrate_backward(a, p, g, w);
  auto targets = std::vector<std::pair<std::string, std::pair<Tensor<double>*, const Tensor<double>*>>>{
      {"a", {&a, &grads.appearance}}, {"p", {&p, &grads.pose}}, {"g", {&g, &grads.gate}}};
  CHECK(oracle::check_gradients(targets, [&] { return oracle::weighted_sum(integrate(a, p, g), w); }).max_rel < 1e-7);
}

TEST_CASE("alignment block: layer norm then ReLU") {
  AlignmentBlock<double> block("tcb", 5, 7);
  nn::Rng init(5);
  block.init(init, 0.5);
  std::mt19937_64 rng(6);
  auto x = oracle::random_tensor(rng, {4, 5});
  const auto y = block.forward(x);
  REQUIRE(y.shape() == Shape{4, 7});
  for (double v : y.values()) CHECK(v >= 0.0);

  const auto w = oracle::random_tensor(rng, {4, 7});
  std::vector<nn::Parameter<double>*> params;
  block.collect(params);
  nn::zero_grad(params);
  block.forward(x);
  const auto gx = block.backward(w);
  oracle::GradSnapshot snap(params);
  auto targets = snap.targets;
  targets.push_back({"x", {&x, &gx}});
  const auto rep = oracle::check_gradients(targets, [&] { return oracle::weighted_sum(block.forward(x), w); });
  CAPTURE(rep.worst);
  CHECK(rep.max_rel < 1e-5);
}

TEST_CASE("gating block: range, clamp and gradient") {
  GatingBlock<double> block("cgb", 6, 4);
  nn::Rng init(7);
  block.init(init, 0.5);
  std::mt19937_64 rng(8);
  auto x = oracle::random_tensor(rng, {8, 6});
  const auto g = block.forward(x, true);
  REQUIRE(g.shape() == Shape{8, 4});
  for (double v : g.values()) CHECK((v >= kGateEpsilon && v <= 1.0 - kGateEpsilon));

  const auto w = oracle::random_tensor(rng, {8, 4});
  std::vector<nn::Parameter<double>*> params;
  block.collect(params);
  nn::zero_grad(params);
  block.forward(x, true);
  const auto gx = block.backward(w);
  oracle::GradSnapshot snap(params);
  auto targets = snap.targets;
  targets.push_back({"x", {&x, &gx}});
  const auto rep = oracle::check_gradients(targets, [&] { return oracle::weighted_sum(block.forward(x, true), w); });
  CAPTURE(rep.worst);
  CHECK(rep.max_rel < 1e-5);

  // Saturated pre-activations are clamped and pass no gradient.
  GatingBlock<double> sat("sat", 1, 1);
  sat.linear.weight.value.fill(1.0);
  sat.norm.gamma.value.fill(100.0);
  Tensor<double> big({2, 1}, 0.0);
  big[0] = -1.0;
  big[1] = 1.0;
  const auto gs = sat.forward(big, true);
  CHECK(gs[0] == kGateEpsilon);
  CHECK(gs[1] == 1.0 - kGateEpsilon);
  std::vector<nn::Parameter<double>*> sp;
  sat.collect(sp);
  nn::zero_grad(sp);
  const auto gb = sat.backward(Tensor<double>({2, 1}, 1.0));
  CHECK(gb[0] == 0.0);
  CHECK(gb[1] == 0.0);
}

TEST_CASE("channel concat and split") {
  std::mt19937_64 rng(9);
  const auto a = oracle::random_tensor(rng, {3, 2});
  const auto b = oracle::random_tensor(rng, {3, 4});
  const auto c = concat_channels(a, b);
  REQUIRE(c.shape() == Shape{3, 6});
  CHECK(c.at(1, 1) == a.at(1, 1));
  CHECK(c.at(2, 5) == b.at(2, 3));
  Tensor<double> a2, b2;
  split_channels(c, 2, a2, b2);
  CHECK(a2 == a);
  CHECK(b2 == b);
}

TEST_CASE("gate source names") {
  for (auto s : {GateSource::kPose, GateSource::kAppearance, GateSource::kBoth}) {
    CHECK(gate_source_from_string(to_string(s)) == s);
  }
  CHECK_THROWS(gate_source_from_string("elbow"));
}
