#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "integral_action/checkpoint.hpp"
#include "integral_action/config.hpp"
#include "integral_action/reports.hpp"
#include "integral_action/train_eval.hpp"

using namespace integral_action;

namespace {

// Small enough for a full train/evaluate cycle in a couple of seconds.
ExperimentConfig tiny() {
  ExperimentConfig c;
  c.codec.height = c.codec.width = 8;
  c.sampling.clip = {4, 4, ClipMode::kTrainRandomStart};
  c.appearance.stage_widths = {4, 8};
  c.appearance.blocks_per_stage = {1, 1};
  c.appearance.height = c.appearance.width = 16;
  c.appearance.stem_kernel = 3;
  c.pose.stage_widths = {4, 8};
  c.pose.blocks_per_stage = {1, 1};
  c.pose.height = c.pose.width = 8;
  c.model.common_width = 8;
  c.model.num_classes = 3;
  c.synth.num_classes = 3;
  c.synth.frames_per_video = 16;
  c.synth.appearance_height = c.synth.appearance_width = 16;
  c.synth.pose_height = c.synth.pose_width = 8;
  c.synth.figure_scale = 0.4f;
  c.synth.train_per_class = 2;
  c.synth.val_per_class = 1;
  c.train.batch_size = 2;
  c.train.stream = {1e-2, {1}, 10.0, 2};
  c.train.integrator = {1e-2, {1}, 10.0, 2};
  c.train.eval_clips = 2;
  return c;
}

struct Fixture {
  ExperimentConfig cfg = tiny();
  Dataset train = make_synthetic_dataset(Split::kTrain, cfg, 1);
  Dataset in = make_synthetic_dataset(Split::kValInContext, cfg, 1);
  Dataset out = make_synthetic_dataset(Split::kValOutOfContext, cfg, 1);
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

const TrainResult& stream(StreamKind kind) {
  static TrainResult a = train_stream(StreamKind::kAppearance, fixture().train, fixture().in, fixture().cfg);
  static TrainResult p = train_stream(StreamKind::kPose, fixture().train, fixture().in, fixture().cfg);
  return kind == StreamKind::kAppearance ? a : p;
}

}  // namespace

TEST_CASE("tiny config is valid and JSON round-trips") {
  const auto cfg = tiny();
  CHECK_NOTHROW(cfg.validate());
  const auto j = to_json(cfg);
  const auto back = experiment_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(to_json(experiment_config_from_json(nlohmann::json::object())) == to_json(ExperimentConfig::toy()));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(experiment_config_from_json({{"trian", {}}}), std::invalid_argument);
  CHECK_THROWS_AS(experiment_config_from_json({{"train", {{"batchsize", 3}}}}), std::invalid_argument);
  CHECK_THROWS(experiment_config_from_json({{"integrator", {{"gate_source", "elbow"}}}}));
  CHECK_THROWS(experiment_config_from_json({{"codec", {{"height", 12}}}}));
  const auto c = experiment_config_from_json({{"integrator", {{"lambda", 5.0}, {"gate_source", "both"}}}});
  CHECK(c.model.lambda == 5.0);
  CHECK(c.model.gate_source == GateSource::kBoth);
  CHECK_NOTHROW(ExperimentConfig::full_scale().validate());
}

TEST_CASE("step learning-rate schedule") {
  const LrSchedule s{1e-2, {14, 18}, 10.0, 20};
  CHECK(s.rate_at(0) == 1e-2);
  CHECK(s.rate_at(13) == 1e-2);
  CHECK(s.rate_at(14) == doctest::Approx(1e-3));
  CHECK(s.rate_at(19) == doctest::Approx(1e-4));
}

TEST_CASE("sgd with momentum and weight decay") {
  nn::Parameter<float> p("w", {2}, 1.0f);
  p.grad[0] = 0.5f;
  p.grad[1] = 0.0f;
  SgdOptimizer opt({&p}, 0.9, 0.1);
  opt.step(0.1);
  // v = g + wd * w = 0.6, 0.1
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.06));
  CHECK(p.value[1] == doctest::Approx(1.0 - 0.01));
  opt.step(0.1);
  // v = 0.9 * 0.6 + 0.5 + 0.1 * 0.94
  CHECK(p.value[0] == doctest::Approx(0.94 - 0.1 * (0.54 + 0.5 + 0.094)));

  nn::Parameter<float> frozen("f", {1}, 1.0f);
  frozen.frozen = true;
  frozen.grad[0] = 1.0f;
  SgdOptimizer none({&frozen}, 0.9, 0.1);
  CHECK(none.parameters().empty());
  none.step(1.0);
  CHECK(frozen.value[0] == 1.0f);
}

TEST_CASE("epoch order is a seeded permutation") {
  const auto a = epoch_order(50, 3, 0);
  CHECK(a == epoch_order(50, 3, 0));
  CHECK_FALSE(a == epoch_order(50, 3, 1));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("clip plans") {
  auto& f = fixture();
  const auto p1 = train_clip_plan(f.train.videos[0], f.cfg, 3);
  const auto p2 = train_clip_plan(f.train.videos[0], f.cfg, 3);
  CHECK(p1.appearance_frames == p2.appearance_frames);
  CHECK(p1.pose_frames.size() == 4 * static_cast<std::size_t>(f.cfg.model.pool_factor));
  const auto e = eval_clip_plan(f.cfg, 0, 2);
  CHECK(e.augment.is_identity());
  CHECK(e.appearance_frames.front() == 0);
  CHECK_THROWS(eval_clip_plan(f.cfg, 2, 2));
  const auto clip = load_clip(f.train.videos[0], f.cfg, p1, true, true);
  CHECK(clip.appearance.shape() == Shape{4, 3, 16, 16});
  CHECK(clip.pose.dim(1) == 37);

  // Appearance is standardised with the configured mean / std.
  const auto raw = VideoRenderer(f.in.videos[0].action, f.in.videos[0].context, f.in.videos[0].seed, f.cfg.synth)
                       .render_clip(e.appearance_frames);
  const auto std_clip = load_clip(f.in.videos[0], f.cfg, e, true, false);
  CHECK(std_clip.pose.empty());
  for (std::size_t i = 0; i < raw.data.size(); ++i) CHECK(std_clip.appearance[i] == (raw.data[i] - 0.5f) / 0.5f);
  auto cfg = f.cfg;
  cfg.sampling.mean = {0.0f, 0.0f, 0.0f};
  cfg.sampling.std = {1.0f, 1.0f, 1.0f};
  CHECK(load_clip(f.in.videos[0], cfg, e, true, false).appearance == raw.data);
}

TEST_CASE("checkpoint round trip is byte identical") {
  const auto& ckpt = stream(StreamKind::kPose).checkpoint;
  const auto bytes = serialize_checkpoint(ckpt);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back == ckpt);
  CHECK(serialize_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "ia_unit_ckpt.iack";
  save_checkpoint(path, ckpt);
  CHECK(load_checkpoint(path) == ckpt);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS(deserialize_checkpoint(truncated));
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS(deserialize_checkpoint(extra));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(deserialize_checkpoint(bad));
}

TEST_CASE("rng state round trip") {
  nn::Rng rng(99);
  rng();
  auto copy = rng_from_state_string(rng_state_string(rng));
  CHECK(copy() == rng());
}

TEST_CASE("stream training is deterministic and tagged") {
  const auto& r = stream(StreamKind::kAppearance);
  CHECK(r.checkpoint.variant == "appearance_only");
  CHECK(r.checkpoint.stage == "stream");
  CHECK(r.epochs.size() == 2);
  auto& f = fixture();
  const auto again = train_stream(StreamKind::kAppearance, f.train, f.in, f.cfg);
  CHECK(serialize_checkpoint(again.checkpoint) == serialize_checkpoint(r.checkpoint));
  CHECK_NOTHROW(require_stream_checkpoint(r.checkpoint, StreamKind::kAppearance));
  CHECK_THROWS(require_stream_checkpoint(r.checkpoint, StreamKind::kPose));
}

TEST_CASE("zero epochs returns the initialisation") {
  auto cfg = tiny();
  cfg.train.stream.epochs = 0;
  cfg.train.stream.decay_epochs = {};
  auto& f = fixture();
  const auto r = train_stream(StreamKind::kPose, f.train, f.in, cfg);
  CHECK(r.best_epoch == -1);
  CHECK(r.epochs.empty());
  CHECK_FALSE(r.checkpoint.tensors.empty());
}

TEST_CASE("integrator training leaves frozen streams bit-identical") {
  auto& f = fixture();
  const auto& a = stream(StreamKind::kAppearance).checkpoint;
  const auto& p = stream(StreamKind::kPose).checkpoint;
  FeatureCache cache(a, p, f.cfg);
  const auto r = train_integrator(&a, &p, f.train, f.in, f.cfg, IntegratorOptions{}, &cache);
  CHECK(r.checkpoint.variant == "integral");
  std::size_t checked = 0;
  for (const auto* src : {&a, &p}) {
    for (const auto& t : src->tensors) {
      if (t.name.rfind("appearance.", 0) != 0 && t.name.rfind("pose.", 0) != 0) continue;
      const auto* got = r.checkpoint.find(t.name);
      if (got == nullptr) continue;
      CHECK(got->value == t.value);
      ++checked;
    }
  }
  CHECK(checked > 20);

  // Cached and uncached evaluation agree exactly.
  EvalOptions opts;
  opts.clips_per_video = 2;
  const auto with = evaluate(r.checkpoint, f.out, f.cfg, opts, &cache);
  const auto without = evaluate(r.checkpoint, f.out, f.cfg, opts);
  CHECK(to_json(with.report) == to_json(without.report));
  REQUIRE(with.report.gate_mean.has_value());
  for (const auto& v : with.videos) CHECK((*v.gate_mean > 0.0 && *v.gate_mean < 1.0));

  // A second run reproduces the report exactly.
  const auto r2 = train_integrator(&a, &p, f.train, f.in, f.cfg, IntegratorOptions{});
  CHECK(to_json(evaluate(r2.checkpoint, f.out, f.cfg, opts).report) == to_json(without.report));

  CHECK_THROWS(train_integrator(nullptr, &p, f.train, f.in, f.cfg, IntegratorOptions{}));
}

TEST_CASE("unfrozen integrator training moves the streams") {
  auto& f = fixture();
  const auto& a = stream(StreamKind::kAppearance).checkpoint;
  const auto& p = stream(StreamKind::kPose).checkpoint;
  IntegratorOptions o;
  o.freeze_streams = false;
  auto cfg = f.cfg;
  cfg.train.integrator.epochs = 1;
  cfg.train.integrator.decay_epochs = {};
  const auto r = train_integrator(&a, &p, f.train, f.in, cfg, o);
  bool moved = false;
  for (const auto& t : a.tensors) {
    const auto* got = r.checkpoint.find(t.name);
    if (got != nullptr && !t.is_buffer && !(got->value == t.value)) moved = true;
  }
  CHECK(moved);
}

TEST_CASE("score average endpoints equal the single streams") {
  auto& f = fixture();
  const auto& a = stream(StreamKind::kAppearance).checkpoint;
  const auto& p = stream(StreamKind::kPose).checkpoint;
  const auto avg = make_score_average_checkpoint(a, p);
  EvalOptions o;
  o.clips_per_video = 2;
  const auto ea = evaluate(a, f.in, f.cfg, o), ep = evaluate(p, f.in, f.cfg, o);
  o.score_average_weight = 1.0;
  const auto e1 = evaluate(avg, f.in, f.cfg, o);
  o.score_average_weight = 0.0;
  const auto e0 = evaluate(avg, f.in, f.cfg, o);
  for (std::size_t i = 0; i < ea.videos.size(); ++i) {
    CHECK(e1.videos[i].probs == ea.videos[i].probs);
    CHECK(e0.videos[i].probs == ep.videos[i].probs);
  }
  CHECK(e1.report.top1 == ea.report.top1);
  CHECK(e0.report.top1 == ep.report.top1);
}

TEST_CASE("top-k accuracy with ties") {
  const std::vector<std::vector<double>> probs{{0.5, 0.3, 0.2}, {0.2, 0.2, 0.6}, {0.4, 0.4, 0.2}};
  CHECK(top_k_accuracy(probs, {0, 0, 0}, 1) == doctest::Approx(200.0 / 3.0));
  CHECK(top_k_accuracy(probs, {1, 1, 1}, 1) == 0.0);
  // An equal probability at a lower index ranks ahead.
  CHECK(top_k_accuracy(probs, {1, 1, 1}, 2) == doctest::Approx(200.0 / 3.0));
  CHECK(top_k_accuracy(probs, {2, 2, 2}, 2) == doctest::Approx(100.0 / 3.0));
  CHECK(top_k_accuracy(probs, {2, 2, 2}, 3) == doctest::Approx(100.0));
}

TEST_CASE("gate statistics and oracle selection") {
  std::vector<VideoResult> v(4);
  const double gates[] = {0.1, 0.3, 0.5, 0.9};
  for (int i = 0; i < 4; ++i) {
    v[i].label = i % 2;
    v[i].gate_mean = gates[i];
    v[i].probs = {0.5, 0.5};
  }
  const auto s = gate_statistics(v);
  CHECK(s.mean == doctest::Approx(0.45));
  CHECK(s.variance == doctest::Approx((0.1225 + 0.0225 + 0.0025 + 0.2025) / 4.0));
  CHECK(s.per_class_mean.at(0) == doctest::Approx(0.3));
  CHECK(s.per_class_mean.at(1) == doctest::Approx(0.6));
  v[2].gate_mean.reset();
  CHECK_THROWS_AS(gate_statistics(std::vector<VideoResult>(2)), std::invalid_argument);

  const std::vector<std::vector<double>> pa{{0.9, 0.1}, {0.9, 0.1}, {0.9, 0.1}};
  const std::vector<std::vector<double>> pp{{0.1, 0.9}, {0.1, 0.9}, {0.9, 0.1}};
  CHECK(oracle_selection(pa, pp, {0, 1, 1}) == doctest::Approx(200.0 / 3.0));
  CHECK(oracle_selection(pa, pp, {0, 1, 0}) == doctest::Approx(100.0));
}

TEST_CASE("ablation suite emits every row in one call") {
  auto& f = fixture();
  const auto& a = stream(StreamKind::kAppearance).checkpoint;
  const auto& p = stream(StreamKind::kPose).checkpoint;
  auto cfg = f.cfg;
  cfg.train.integrator.epochs = 1;
  cfg.train.integrator.decay_epochs = {};
  AblationOptions o;
  o.score_weights = {0.0, 0.5, 1.0};
  const auto rep = ablation_suite(a, p, f.train, f.in, f.out, cfg, o);
  for (const char* name : {"appearance_only", "pose_only", "feature_fuse", "no_gate", "score_average_w=0",
                           "score_average_w=1", "integral_lambda=0", "integral_lambda=1", "integral_lambda=1.5",
                           "integral_lambda=5", "integral_gate=pose", "integral_gate=appearance",
                           "integral_gate=both"}) {
    CAPTURE(name);
    CHECK_NOTHROW(rep.row(name));
  }
  CHECK(rep.row("score_average_w=1").in_context.top1 == rep.row("appearance_only").in_context.top1);
  CHECK(rep.row("score_average_w=0").out_of_context.top1 == rep.row("pose_only").out_of_context.top1);
  CHECK(rep.oracle_in >= std::max(rep.row("appearance_only").in_context.top1, rep.row("pose_only").in_context.top1));
  // lambda=1.5 with pose gating is trained once and shared.
  auto shared = rep.row("integral_gate=pose").out_of_context;
  shared.name = rep.row("integral_lambda=1.5").out_of_context.name;
  CHECK(to_json(rep.row("integral_lambda=1.5").out_of_context) == to_json(shared));

  const auto j = to_json(rep);
  CHECK(j["rows"].size() == rep.rows.size());
  const auto csv = ablation_csv(rep, 3);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(2 * rep.rows.size() + 1));
}

TEST_CASE("metrics report JSON round trip and CSV") {
  MetricsReport r;
  r.name = "x";
  r.variant = "integral";
  r.split = "val_in_context";
  r.videos = 3;
  r.top_k = 2;
  r.top1 = 66.5;
  r.topk = 100.0;
  r.per_class_top1 = {{0, 50.0}, {1, 100.0}};
  r.gate_mean = 0.25;
  r.gate_var = 0.01;
  r.per_class_gate_mean = {{0, 0.2}, {1, 0.3}};
  const auto back = metrics_report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));
  const auto csv = metrics_csv({r}, 2);
  CHECK(csv.rfind("name,variant,split,videos,top1,k,topk,gate_mean,gate_var", 0) == 0);
}
