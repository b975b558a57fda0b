#include <doctest.h>

#include <random>

#include "integral_action/backbone.hpp"
#include "oracles.hpp"

using namespace integral_action;

TEST_CASE("temporal_shift matches the index oracle") {
  std::mt19937_64 rng(1);
  for (std::size_t c : {1u, 7u, 8u, 9u, 16u, 33u}) {
    for (std::size_t clip_len : {1u, 2u, 5u}) {
      const auto x = oracle::random_tensor(rng, {clip_len * 3, c, 2, 3});
      const auto got = nn::temporal_shift(x, clip_len, 1.0 / 8.0);
      CHECK(got == oracle::temporal_shift(x, clip_len, 1.0 / 8.0));
    }
  }
}

TEST_CASE("temporal_shift split and boundaries") {
  Tensor<double> x({4, 16, 1, 1});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 16; ++c) x.at(t, c, 0, 0) = 100.0 * (t + 1) + c;
  const auto y = temporal_shift(x, 1.0 / 8.0);
  // n = 2: channels 0,1 from t-1, channels 2,3 from t+1.
  CHECK(y.at(0, 0, 0, 0) == 0.0);
  CHECK(y.at(1, 1, 0, 0) == 101.0);
  CHECK(y.at(3, 2, 0, 0) == 0.0);
  CHECK(y.at(0, 3, 0, 0) == 203.0);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 4; c < 16; ++c) CHECK(y.at(t, c, 0, 0) == x.at(t, c, 0, 0));

  // Fewer than 8 channels: nothing moves.
  std::mt19937_64 rng(2);
  const auto small = oracle::random_tensor(rng, {3, 7, 2, 2});
  CHECK(temporal_shift(small, 1.0 / 8.0) == small);
}

TEST_CASE("temporal_shift is linear and its backward is the adjoint") {
  std::mt19937_64 rng(3);
  const auto a = oracle::random_tensor(rng, {6, 16, 2, 2});
  const auto b = oracle::random_tensor(rng, {6, 16, 2, 2});
  Tensor<double> sum(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) sum[i] = 2.0 * a[i] - 3.0 * b[i];
  const auto sa = nn::temporal_shift(a, 3, 0.125), sb = nn::temporal_shift(b, 3, 0.125);
  const auto ss = nn::temporal_shift(sum, 3, 0.125);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(ss[i] == doctest::Approx(2.0 * sa[i] - 3.0 * sb[i]).epsilon(1e-12));

  // <S a, b> == <a, S^T b>
  const auto stb = nn::temporal_shift_backward(b, 3, 0.125);
  CHECK(oracle::weighted_sum(sa, b) == doctest::Approx(oracle::weighted_sum(a, stb)).epsilon(1e-12));
}

TEST_CASE("temporal average pooling") {
  Tensor<double> f({8, 2});
  for (std::size_t i = 0; i < 8; ++i) {
    f.at(i, 0) = static_cast<double>(i);
    f.at(i, 1) = 1.0;
  }
  const auto p = temporal_avg_pool(f, 4);
  REQUIRE(p.shape() == Shape{2, 2});
  CHECK(p.at(0, 0) == 1.5);
  CHECK(p.at(1, 0) == 5.5);
  CHECK(p.at(1, 1) == 1.0);
  const auto g = temporal_avg_pool_backward(p, 4);
  CHECK(g.shape() == f.shape());
  CHECK(g.at(5, 0) == doctest::Approx(5.5 / 4));
}

namespace {

StreamConfig tiny_stream(StreamKind kind) {
  StreamConfig c;
  c.kind = kind;
  c.stage_widths = {8, 16};
  c.blocks_per_stage = {1, 1};
  c.input_channels = kind == StreamKind::kAppearance ? 3 : 5;
  c.height = c.width = kind == StreamKind::kAppearance ? 12 : 6;
  c.frames = 3;
  c.stem_kernel = 3;
  c.init_sigma = 0.3;
  return c;
}

}  // namespace

TEST_CASE("stream output shape") {
  for (auto kind : {StreamKind::kAppearance, StreamKind::kPose}) {
    const auto cfg = tiny_stream(kind);
    Stream<double> s(cfg, "s");
    nn::Rng rng(4);
    s.init(rng);
    std::mt19937_64 r(5);
    const std::size_t hw = static_cast<std::size_t>(cfg.height);
    const auto x = oracle::random_tensor(r, {6, static_cast<std::size_t>(cfg.input_channels), hw, hw});
    CHECK(s.forward(x, 3, true).shape() == Shape{6, 16});
  }
}

TEST_CASE("stream gradients match finite differences") {
  for (auto kind : {StreamKind::kPose, StreamKind::kAppearance}) {
    CAPTURE(to_string(kind));
    const auto cfg = tiny_stream(kind);
    Stream<double> s(cfg, "s");
    nn::Rng init(6);
    s.init(init);
    std::mt19937_64 r(7);
    const std::size_t hw = static_cast<std::size_t>(cfg.height);
    auto x = oracle::random_tensor(r, {6, static_cast<std::size_t>(cfg.input_channels), hw, hw});
    const auto w = oracle::random_tensor(r, {6, 16});

    const auto params = s.parameters();
    nn::zero_grad(params);
    s.forward(x, 3, true);
    const auto gx = s.backward(w, true);
    oracle::GradSnapshot snap(params);
    auto targets = snap.targets;
    targets.push_back({"input", {&x, &gx}});
    const auto loss = [&] { return oracle::weighted_sum(s.forward(x, 3, true), w); };
    const auto rep = oracle::check_gradients(targets, loss, 1e-6, 24);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel < 1e-3);
    CHECK(rep.checked > 100);
  }
}

TEST_CASE("stream config validation") {
  auto c = tiny_stream(StreamKind::kPose);
  CHECK_NOTHROW(c.validate());
  c.blocks_per_stage = {1};
  CHECK_THROWS(c.validate());
  c = tiny_stream(StreamKind::kPose);
  c.shift_fraction = 0.6;
  CHECK_THROWS(c.validate());
}
