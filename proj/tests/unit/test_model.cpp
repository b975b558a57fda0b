#include <doctest.h>

#include <cmath>
#include <random>

#include "integral_action/config.hpp"
#include "integral_action/model.hpp"
#include "oracles.hpp"

using namespace integral_action;

namespace {

ModelConfig small_head(ModelVariant variant, GateSource source = GateSource::kPose) {
  ModelConfig m;
  m.variant = variant;
  m.gate_source = source;
  m.num_classes = 5;
  m.common_width = 6;
  m.pool_factor = 2;
  m.head_init_sigma = 0.4;
  m.appearance.kind = StreamKind::kAppearance;
  m.appearance.stage_widths = {7};
  m.appearance.blocks_per_stage = {1};
  m.appearance.frames = 3;
  m.pose.kind = StreamKind::kPose;
  m.pose.stage_widths = {4};
  m.pose.blocks_per_stage = {1};
  m.pose.frames = 6;
  m.pose.input_channels = 5;
  return m;
}

struct HeadCase {
  Head<double> head;
  Tensor<double> f_a, f_p;
  std::vector<int> labels{1, 4};
  explicit HeadCase(const ModelConfig& cfg, std::uint64_t seed = 1) : head(cfg) {
    nn::Rng init(seed);
    head.init(init);
    std::mt19937_64 rng(seed + 100);
    f_a = oracle::random_tensor(rng, {6, 7});
    f_p = oracle::random_tensor(rng, {12, 4});
    if (!cfg.uses_appearance()) f_a = {};
    if (!cfg.uses_pose()) f_p = {};
  }
  double loss(double lambda) {
    head.forward(f_a, f_p, 2, true);
    return head.backward(labels, lambda).loss;
  }
};

oracle::GradReport check_head(HeadCase& c, double lambda) {
  const auto params = c.head.parameters();
  nn::zero_grad(params);
  c.head.forward(c.f_a, c.f_p, 2, true);
  const auto res = c.head.backward(c.labels, lambda);
  oracle::GradSnapshot snap(params);
  auto targets = snap.targets;
  if (!c.f_a.empty()) targets.push_back({"f_a", {&c.f_a, &res.grad_appearance}});
  if (!c.f_p.empty()) targets.push_back({"f_p", {&c.f_p, &res.grad_pose}});
  return oracle::check_gradients(targets, [&] { return c.loss(lambda); });
}

}  // namespace

TEST_CASE("head gradients match finite differences for every trainable variant") {
  for (auto v : {ModelVariant::kIntegral, ModelVariant::kAppearanceOnly, ModelVariant::kPoseOnly,
                 ModelVariant::kFeatureFuse, ModelVariant::kNoGate}) {
    CAPTURE(to_string(v));
    HeadCase c(small_head(v));
    const auto rep = check_head(c, 1.5);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_CASE("integral head gradients for every gate source and lambda") {
  for (auto s : {GateSource::kPose, GateSource::kAppearance, GateSource::kBoth}) {
    for (double lambda : {0.0, 1.0, 5.0}) {
      CAPTURE(to_string(s));
      CAPTURE(lambda);
      HeadCase c(small_head(ModelVariant::kIntegral, s), 3);
      const auto rep = check_head(c, lambda);
      CAPTURE(rep.worst);
      CHECK(rep.max_rel < 1e-4);
    }
  }
}

TEST_CASE("loss decomposes into classification plus lambda times the gate term") {
  HeadCase c(small_head(ModelVariant::kIntegral));
  const auto out = c.head.forward(c.f_a, c.f_p, 2, true);
  const auto r = c.head.backward(c.labels, 2.0);
  double ce = 0.0;
  for (std::size_t i = 0; i < 2; ++i) ce -= std::log(out.video_probs.at(i, static_cast<std::size_t>(c.labels[i])));
  CHECK(r.classification == doctest::Approx(ce / 2.0).epsilon(1e-12));
  CHECK(r.gate == doctest::Approx(gate_regularizer(out.gate)).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(r.classification + 2.0 * r.gate).epsilon(1e-12));
}

TEST_CASE("video probabilities are the mean of frame probabilities") {
  HeadCase c(small_head(ModelVariant::kFeatureFuse));
  const auto out = c.head.forward(c.f_a, c.f_p, 2, false);
  for (std::size_t clip = 0; clip < 2; ++clip) {
    double total = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      double m = 0.0;
      for (std::size_t t = 0; t < 3; ++t) m += out.frame_probs.at(clip * 3 + t, k);
      CHECK(out.video_probs.at(clip, k) == doctest::Approx(m / 3.0).epsilon(1e-12));
      total += out.video_probs.at(clip, k);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("forced gate reproduces the single streams' integrated features") {
  HeadCase c(small_head(ModelVariant::kIntegral));
  c.head.forced_gate = 0.25;
  const auto out = c.head.forward(c.f_a, c.f_p, 2, false);
  for (double g : out.gate.values()) CHECK(g == 0.25);
}

TEST_CASE("score average endpoints and mixture") {
  Prediction a, p;
  a.video_probs = {0.7, 0.2, 0.1};
  p.video_probs = {0.1, 0.1, 0.8};
  a.per_frame_probs = Tensor<double>({1, 3}, std::vector<double>{0.7, 0.2, 0.1});
  p.per_frame_probs = Tensor<double>({1, 3}, std::vector<double>{0.1, 0.1, 0.8});
  CHECK(score_average(a, p, 1.0).video_probs == a.video_probs);
  CHECK(score_average(a, p, 0.0).video_probs == p.video_probs);
  const auto m = score_average(a, p, 0.3);
  CHECK(m.video_probs[2] == doctest::Approx(0.3 * 0.1 + 0.7 * 0.8));
  CHECK_FALSE(m.gate.has_value());
}

TEST_CASE("composite loss") {
  Prediction pred;
  pred.video_probs = {0.25, 0.75};
  CHECK(composite_loss(pred, 1, 3.0) == doctest::Approx(-std::log(0.75)));
  pred.gate = Tensor<double>({2, 2}, 0.5);
  CHECK(composite_loss(pred, 0, 2.0) == doctest::Approx(-std::log(0.25) + 2.0 * std::log(2.0)));
}

TEST_CASE("end-to-end gradients through both streams") {
  ModelConfig m = small_head(ModelVariant::kIntegral);
  m.appearance.stage_widths = {8};
  m.appearance.height = m.appearance.width = 8;
  m.appearance.stem_kernel = 3;
  m.appearance.init_sigma = 0.3;
  m.pose.stage_widths = {8};
  m.pose.height = m.pose.width = 4;
  m.pose.init_sigma = 0.3;
  ActionModel<double> model(m);
  nn::Rng init(9);
  model.init(init);
  std::mt19937_64 rng(10);
  ActionModel<double>::Batch batch{oracle::random_tensor(rng, {6, 3, 8, 8}), oracle::random_tensor(rng, {12, 5, 4, 4}), 2};
  const std::vector<int> labels{0, 3};

  const auto params = model.parameters();
  nn::zero_grad(params);
  model.forward(batch, true, true);
  model.backward(labels, 1.5, true);
  oracle::GradSnapshot snap(params);
  const auto loss = [&] {
    model.forward(batch, true, true);
    return model.head().backward(labels, 1.5).loss;
  };
  const auto rep = oracle::check_gradients(snap.targets, loss, 1e-6, 16);
  CAPTURE(rep.worst);
  CHECK(rep.max_rel < 1e-3);
}

TEST_CASE("frozen streams receive no gradient") {
  ModelConfig m = small_head(ModelVariant::kIntegral);
  m.appearance.stage_widths = {8};
  m.appearance.height = m.appearance.width = 8;
  m.appearance.stem_kernel = 3;
  m.pose.stage_widths = {8};
  m.pose.height = m.pose.width = 4;
  ActionModel<float> model(m);
  nn::Rng init(11);
  model.init(init);
  std::mt19937_64 rng(12);
  ActionModel<float>::Batch batch{oracle::random_tensor(rng, {6, 3, 8, 8}).cast<float>(),
                                  oracle::random_tensor(rng, {12, 5, 4, 4}).cast<float>(), 2};
  nn::zero_grad(model.parameters());
  model.forward(batch, true, false);
  model.backward({0, 1}, 1.5, false);
  for (auto* p : model.stream_parameters()) {
    if (p->is_buffer) continue;
    for (float g : p->grad.values()) CHECK(g == 0.0f);
  }
}

TEST_CASE("toy model config derivation") {
  const auto cfg = ExperimentConfig::toy();
  const auto m = cfg.model_config(ModelVariant::kIntegral);
  CHECK(m.pose.input_channels == 13 + 2 * 12);
  CHECK(m.pose.frames == m.appearance.frames * m.pool_factor);
  CHECK(m.common_width == 64);
  CHECK(ExperimentConfig::full_scale().model.common_width == 512);
  CHECK(m.lambda == 1.5);
  CHECK(model_variant_from_string("score_average") == ModelVariant::kScoreAverage);
}
