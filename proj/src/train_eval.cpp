#include "integral_action/train_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace integral_action {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ull)); }

constexpr std::uint64_t kOrderTag = 0x0DDE;
constexpr std::uint64_t kInitTag = 0x1A17;

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Stacks per-clip tensors along axis 0.
Tensor<float> stack(const std::vector<const Tensor<float>*>& parts) {
  if (parts.empty()) return {};
  Shape shape = parts.front()->shape();
  const std::size_t rows = shape[0];
  shape[0] = rows * parts.size();
  Tensor<float> out(shape);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    if (p->shape() != parts.front()->shape()) throw std::logic_error("stack: ragged clips");
    std::copy(p->data(), p->data() + p->size(), out.data() + offset);
    offset += p->size();
  }
  return out;
}

void require_finite(double loss, const std::string& stage, int epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error(stage + ": training diverged (non-finite loss " + format_number(loss) + " at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch) + ")");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json model_metadata(const ModelConfig& m) {
  return {{"gate_source", to_string(m.gate_source)},
          {"lambda", m.lambda},
          {"score_average_weight", m.score_average_weight}};
}

}  // namespace

Dataset make_synthetic_dataset(Split split, const ExperimentConfig& cfg, std::uint64_t seed) {
  return Dataset{split, make_dataset(split, cfg.synth, seed)};
}

// --- clips -----------------------------------------------------------------------

namespace {

ClipPlan plan_from_start(const ExperimentConfig& cfg, int start) {
  const int f = cfg.synth.frames_per_video;
  const int pool = cfg.model.pool_factor;
  Rng unused;
  ClipPlan plan;
  ClipSpec spec = cfg.sampling.clip;
  spec.mode = ClipMode::kEvalUniformStarts;
  plan.appearance_frames = sample_clip_indices(f, spec, unused, start);
  ClipSpec pose_spec{spec.frames * pool, spec.interval / pool, ClipMode::kEvalUniformStarts};
  plan.pose_frames = sample_clip_indices(f, pose_spec, unused, start);
  return plan;
}

}  // namespace

ClipPlan train_clip_plan(const VideoDescriptor& video, const ExperimentConfig& cfg, int epoch) {
  Rng rng(mix(mix(cfg.train.seed, static_cast<std::uint64_t>(epoch)), video.seed));
  const int start = std::uniform_int_distribution<int>(0, cfg.synth.frames_per_video - 1)(rng);
  ClipPlan plan = plan_from_start(cfg, start);
  if (cfg.sampling.augment_enabled) {
    plan.augment = make_augment_spec(rng, cfg.sampling.augment, cfg.synth.appearance_width,
                                     cfg.synth.appearance_height);
  }
  return plan;
}

ClipPlan eval_clip_plan(const ExperimentConfig& cfg, int index, int count) {
  if (count < 1 || index < 0 || index >= count) throw std::invalid_argument("eval_clip_plan: bad clip index");
  return plan_from_start(cfg, eval_clip_starts(cfg.synth.frames_per_video, count)[static_cast<std::size_t>(index)]);
}

ClipTensors load_clip(const VideoDescriptor& video, const ExperimentConfig& cfg, const ClipPlan& plan,
                      bool need_appearance, bool need_pose) {
  const VideoRenderer renderer(video.action, video.context, video.seed, cfg.synth);
  ClipTensors out;
  if (need_appearance) {
    AppearanceClip clip = renderer.render_clip(plan.appearance_frames);
    if (!plan.augment.is_identity()) clip = apply_augment_appearance(clip, plan.augment);
    out.appearance = std::move(clip.data);
    const std::size_t plane = out.appearance.dim(2) * out.appearance.dim(3);
    float* px = out.appearance.data();
    for (std::size_t t = 0; t < out.appearance.dim(0); ++t) {
      for (std::size_t ch = 0; ch < 3; ++ch, px += plane) {
        const float m = cfg.sampling.mean[ch], inv = 1.0f / cfg.sampling.std[ch];
        for (std::size_t i = 0; i < plane; ++i) px[i] = (px[i] - m) * inv;
      }
    }
  }
  if (need_pose) {
    const Skeleton skeleton = cfg.skeleton();
    std::vector<PoseFrame> frames = renderer.pose_clip(plan.pose_frames);
    if (!plan.augment.is_identity()) {
      frames = apply_augment_pose(frames, plan.augment.rescaled(cfg.synth.scale_ratio()), skeleton,
                                  cfg.codec.width, cfg.codec.height);
    }
    out.pose = encode_pose_clip(frames, skeleton, cfg.codec).data;
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix(mix(seed, kOrderTag), static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

// --- optimiser -------------------------------------------------------------------

SgdOptimizer::SgdOptimizer(nn::ParameterRefs<float> params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto* p : params) {
    if (!p->trainable()) continue;
    params_.push_back(p);
    velocity_.emplace_back(p->value.shape());
  }
}

void SgdOptimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto* p = params_[i];
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double g = static_cast<double>(p->grad[j]) + weight_decay_ * static_cast<double>(p->value[j]);
      v[j] = static_cast<float>(momentum_ * v[j] + g);
      p->value[j] = static_cast<float>(p->value[j] - lr * v[j]);
    }
  }
}

// --- checkpoints / models -----------------------------------------------------------

void require_stream_checkpoint(const Checkpoint& ckpt, StreamKind kind) {
  const std::string want = kind == StreamKind::kAppearance ? "appearance_only" : "pose_only";
  if (ckpt.variant != want) {
    throw std::invalid_argument(std::string("expected a pre-trained ") + to_string(kind) +
                                " stream checkpoint (variant " + want + "), got variant '" + ckpt.variant +
                                "'; run train-stream --kind " + to_string(kind) + " first");
  }
}

Checkpoint make_score_average_checkpoint(const Checkpoint& appearance_ckpt, const Checkpoint& pose_ckpt) {
  require_stream_checkpoint(appearance_ckpt, StreamKind::kAppearance);
  require_stream_checkpoint(pose_ckpt, StreamKind::kPose);
  Checkpoint out;
  out.variant = to_string(ModelVariant::kScoreAverage);
  out.stage = "combined";
  out.tensors = appearance_ckpt.tensors;
  out.tensors.insert(out.tensors.end(), pose_ckpt.tensors.begin(), pose_ckpt.tensors.end());
  return out;
}

namespace {

ModelConfig config_for_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg) {
  const ModelVariant variant = model_variant_from_string(ckpt.variant);
  ModelConfig m = cfg.model_config(variant);
  const json& meta = ckpt.metadata;
  if (meta.contains("model")) {
    const json& mm = meta["model"];
    if (mm.contains("gate_source")) m.gate_source = gate_source_from_string(mm["gate_source"].get<std::string>());
    if (mm.contains("lambda")) m.lambda = mm["lambda"].get<double>();
    if (mm.contains("score_average_weight")) m.score_average_weight = mm["score_average_weight"].get<double>();
  }
  return m;
}

}  // namespace

std::unique_ptr<ActionModel<float>> model_from_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                                          std::optional<double> score_average_weight) {
  ModelConfig m = config_for_checkpoint(ckpt, cfg);
  if (score_average_weight) m.score_average_weight = *score_average_weight;
  auto model = std::make_unique<ActionModel<float>>(m);
  load_parameters(*model, ckpt, true);
  return model;
}

// --- feature cache -------------------------------------------------------------------

FeatureCache::FeatureCache(const Checkpoint& appearance_ckpt, const Checkpoint& pose_ckpt,
                           const ExperimentConfig& cfg)
    : cfg_(cfg) {
  require_stream_checkpoint(appearance_ckpt, StreamKind::kAppearance);
  require_stream_checkpoint(pose_ckpt, StreamKind::kPose);
  appearance_ = model_from_checkpoint(appearance_ckpt, cfg);
  pose_ = model_from_checkpoint(pose_ckpt, cfg);
  hash_a_ = parameter_hash(appearance_->stream_parameters());
  hash_p_ = parameter_hash(pose_->stream_parameters());
}

const FeatureCache::Entry& FeatureCache::compute(const std::string& key, const VideoDescriptor& video,
                                                 const ClipPlan& plan) {
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  ClipTensors clip = load_clip(video, cfg_, plan, true, true);
  Entry e;
  typename ActionModel<float>::Batch ba{std::move(clip.appearance), {}, 1};
  e.appearance = appearance_->stream_forward(ba, false).appearance;
  typename ActionModel<float>::Batch bp{{}, std::move(clip.pose), 1};
  e.pose = pose_->stream_forward(bp, false).pose;
  return entries_.emplace(key, std::move(e)).first->second;
}

const FeatureCache::Entry& FeatureCache::train(const VideoDescriptor& video, int epoch) {
  return compute("t/" + std::to_string(epoch) + "/" + std::to_string(video.seed), video,
                 train_clip_plan(video, cfg_, epoch));
}

const FeatureCache::Entry& FeatureCache::eval(const VideoDescriptor& video, int index, int count) {
  return compute("e/" + std::to_string(count) + "/" + std::to_string(index) + "/" + std::to_string(video.seed),
                 video, eval_clip_plan(cfg_, index, count));
}

// --- evaluation ------------------------------------------------------------------------

double top_k_accuracy(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, int k) {
  if (probs.size() != labels.size()) throw std::invalid_argument("top_k_accuracy: length mismatch");
  if (probs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= p.size()) throw std::invalid_argument("top_k_accuracy: bad label");
    // Rank of the true class; ties go to the lower class index.
    int rank = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (p[j] > p[y] || (p[j] == p[y] && static_cast<int>(j) < y)) ++rank;
    }
    if (rank < k) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(probs.size());
}

MetricsReport score_videos(const std::vector<VideoResult>& videos, int num_classes) {
  MetricsReport r;
  r.videos = videos.size();
  r.top_k = std::min(5, num_classes - 1);
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  for (const auto& v : videos) {
    probs.push_back(v.probs);
    labels.push_back(v.label);
  }
  r.top1 = top_k_accuracy(probs, labels, 1);
  r.topk = top_k_accuracy(probs, labels, r.top_k);
  std::map<int, std::pair<std::vector<std::vector<double>>, std::vector<int>>> by_class;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    by_class[labels[i]].first.push_back(probs[i]);
    by_class[labels[i]].second.push_back(labels[i]);
  }
  for (const auto& [c, pl] : by_class) r.per_class_top1[c] = top_k_accuracy(pl.first, pl.second, 1);
  if (!videos.empty() && videos.front().gate_mean) {
    const GateStats g = gate_statistics(videos);
    r.gate_mean = g.mean;
    r.gate_var = g.variance;
    r.per_class_gate_mean = g.per_class_mean;
  }
  return r;
}

namespace {

using FeatureFn = std::function<FeatureCache::Entry(const VideoDescriptor&, int index, int count)>;

// Head evaluation on features supplied per clip; all clips of a video form one batch.
EvalResult evaluate_head(Head<float>& head, const Dataset& data, int clips,
                         const FeatureFn& features) {
  EvalResult res;
  const ModelConfig& m = head.config();
  double loss = 0.0;
  for (const auto& video : data.videos) {
    std::vector<FeatureCache::Entry> entries;
    std::vector<const Tensor<float>*> fa, fp;
    entries.reserve(static_cast<std::size_t>(clips));
    for (int c = 0; c < clips; ++c) entries.push_back(features(video, c, clips));
    for (const auto& e : entries) {
      if (m.uses_appearance()) fa.push_back(&e.appearance);
      if (m.uses_pose()) fp.push_back(&e.pose);
    }
    const auto out = head.forward(stack(fa), stack(fp), static_cast<std::size_t>(clips), false);
    VideoResult v;
    v.video_id = video.video_id;
    v.label = video.action;
    v.context = video.context;
    const std::size_t k = out.video_probs.dim(1);
    v.probs.assign(k, 0.0);
    for (int c = 0; c < clips; ++c) {
      for (std::size_t j = 0; j < k; ++j) v.probs[j] += out.video_probs.at(static_cast<std::size_t>(c), j);
    }
    for (auto& p : v.probs) p /= clips;
    if (!out.gate.empty()) {
      double g = 0.0;
      for (float x : out.gate.values()) g += x;
      v.gate_mean = g / static_cast<double>(out.gate.size());
    }
    loss -= std::log(std::max(v.probs[static_cast<std::size_t>(video.action)], 1e-12));
    res.videos.push_back(std::move(v));
  }
  res.mean_loss = data.videos.empty() ? 0.0 : loss / static_cast<double>(data.videos.size());
  res.report = score_videos(res.videos, m.num_classes);
  res.report.variant = to_string(m.variant);
  res.report.split = to_string(data.split);
  return res;
}

FeatureFn model_features(ActionModel<float>& model, const ExperimentConfig& cfg) {
  return [&model, &cfg](const VideoDescriptor& video, int index, int count) {
    const ModelConfig& m = model.config();
    ClipTensors clip = load_clip(video, cfg, eval_clip_plan(cfg, index, count), m.uses_appearance(), m.uses_pose());
    typename ActionModel<float>::Batch batch{std::move(clip.appearance), std::move(clip.pose), 1};
    auto f = model.stream_forward(batch, false);
    return FeatureCache::Entry{std::move(f.appearance), std::move(f.pose)};
  };
}

FeatureFn cache_features(FeatureCache& cache) {
  return [&cache](const VideoDescriptor& video, int index, int count) { return cache.eval(video, index, count); };
}

}  // namespace

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& data, const ExperimentConfig& cfg,
                    const EvalOptions& options, FeatureCache* cache) {
  if (options.clips_per_video < 1) throw std::invalid_argument("evaluate: clips_per_video must be >= 1");
  auto model = model_from_checkpoint(ckpt, cfg, options.score_average_weight);
  if (options.forced_gate) {
    if (!model->config().has_gate()) throw std::invalid_argument("evaluate: forced gate needs a gated variant");
    model->head().forced_gate = options.forced_gate;
  }
  // Cached features are only valid for the exact streams they were computed with.
  bool use_cache = cache != nullptr;
  if (use_cache) {
    const auto params = model->stream_parameters();
    nn::ParameterRefs<float> a, p;
    for (auto* q : params) (q->name.rfind("appearance.", 0) == 0 ? a : p).push_back(q);
    if (model->config().uses_appearance() && parameter_hash(a) != cache->appearance_hash()) use_cache = false;
    if (model->config().uses_pose() && parameter_hash(p) != cache->pose_hash()) use_cache = false;
  }
  const FeatureFn fn = use_cache ? cache_features(*cache) : model_features(*model, cfg);
  return evaluate_head(model->head(), data, options.clips_per_video, fn);
}

GateStats gate_statistics(const std::vector<VideoResult>& videos) {
  if (videos.empty()) throw std::invalid_argument("gate_statistics: no videos");
  GateStats s;
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& v : videos) {
    if (!v.gate_mean) throw std::invalid_argument("gate_statistics: variant has no gate");
    s.per_video.push_back(*v.gate_mean);
    acc[v.label].first += *v.gate_mean;
    acc[v.label].second += 1;
  }
  const double n = static_cast<double>(s.per_video.size());
  s.mean = std::accumulate(s.per_video.begin(), s.per_video.end(), 0.0) / n;
  double var = 0.0;
  for (double g : s.per_video) var += (g - s.mean) * (g - s.mean);
  s.variance = var / n;
  for (const auto& [c, sc] : acc) s.per_class_mean[c] = sc.first / static_cast<double>(sc.second);
  return s;
}

GateStats gate_statistics(const Checkpoint& ckpt, const Dataset& data, const ExperimentConfig& cfg,
                          FeatureCache* cache) {
  if (ckpt.variant != to_string(ModelVariant::kIntegral)) {
    throw std::invalid_argument("gate_statistics: checkpoint variant '" + ckpt.variant + "' has no gate");
  }
  return gate_statistics(evaluate(ckpt, data, cfg, EvalOptions{cfg.train.eval_clips, {}, {}}, cache).videos);
}

double oracle_selection(const std::vector<std::vector<double>>& preds_a,
                        const std::vector<std::vector<double>>& preds_p, const std::vector<int>& labels) {
  if (preds_a.size() != labels.size() || preds_p.size() != labels.size()) {
    throw std::invalid_argument("oracle_selection: prediction lists must align with labels");
  }
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::vector<int> y{labels[i]};
    const bool a = top_k_accuracy({preds_a[i]}, y, 1) > 0.0;
    const bool p = top_k_accuracy({preds_p[i]}, y, 1) > 0.0;
    if (a || p) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double oracle_selection(const std::vector<VideoResult>& a, const std::vector<VideoResult>& p) {
  if (a.size() != p.size()) throw std::invalid_argument("oracle_selection: length mismatch");
  std::vector<std::vector<double>> pa, pp;
  std::vector<int> labels;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].video_id != p[i].video_id) throw std::invalid_argument("oracle_selection: videos are not aligned");
    pa.push_back(a[i].probs);
    pp.push_back(p[i].probs);
    labels.push_back(a[i].label);
  }
  return oracle_selection(pa, pp, labels);
}

// --- training ------------------------------------------------------------------------

namespace {

struct BatchData {
  typename ActionModel<float>::Batch batch;
  std::vector<int> labels;
};

BatchData load_batch(const Dataset& data, const std::vector<std::size_t>& order, std::size_t begin,
                     std::size_t end, const ExperimentConfig& cfg, int epoch, bool need_a, bool need_p) {
  std::vector<ClipTensors> clips;
  BatchData out;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& video = data.videos[order[i]];
    clips.push_back(load_clip(video, cfg, train_clip_plan(video, cfg, epoch), need_a, need_p));
    out.labels.push_back(video.action);
  }
  std::vector<const Tensor<float>*> a, p;
  for (const auto& c : clips) {
    if (need_a) a.push_back(&c.appearance);
    if (need_p) p.push_back(&c.pose);
  }
  out.batch = {stack(a), stack(p), clips.size()};
  return out;
}

// Validation top-1 on the in-context split with the configured number of selection clips.
double selection_score(ActionModel<float>& model, const Dataset& val, const ExperimentConfig& cfg,
                       FeatureCache* cache) {
  if (val.videos.empty()) return 0.0;
  const FeatureFn fn = cache ? cache_features(*cache) : model_features(model, cfg);
  return evaluate_head(model.head(), val, cfg.train.selection_clips, fn).report.top1;
}

json base_metadata(const ExperimentConfig& cfg, const ModelConfig& m, const nn::Rng& rng) {
  return {{"config", to_json(cfg)}, {"model", model_metadata(m)}, {"rng_state", rng_state_string(rng)}};
}

}  // namespace

TrainResult train_stream(StreamKind kind, const Dataset& train, const Dataset& val, const ExperimentConfig& cfg,
                         const ProgressFn& progress) {
  cfg.validate();
  const ModelVariant variant = kind == StreamKind::kAppearance ? ModelVariant::kAppearanceOnly : ModelVariant::kPoseOnly;
  const ModelConfig mc = cfg.model_config(variant);
  ActionModel<float> model(mc);
  nn::Rng rng(mix(mix(cfg.train.seed, kInitTag), static_cast<std::uint64_t>(kind)));
  model.init(rng);
  const std::string stage = std::string("train-stream/") + to_string(kind);
  const bool need_a = kind == StreamKind::kAppearance;

  auto snapshot = [&](int epoch, double val_top1) {
    Checkpoint c = capture_checkpoint(model, "stream");
    c.metadata = base_metadata(cfg, mc, rng);
    c.metadata["kind"] = to_string(kind);
    c.metadata["epoch"] = epoch;
    c.metadata["val_top1"] = val_top1;
    return c;
  };

  TrainResult result;
  result.checkpoint = snapshot(-1, 0.0);
  double best = -1.0;
  SgdOptimizer opt(model.parameters(), cfg.train.momentum, cfg.train.weight_decay);
  const auto params = model.parameters();
  const std::size_t n = train.videos.size(), bs = static_cast<std::size_t>(cfg.train.batch_size);
  for (int epoch = 0; epoch < cfg.train.stream.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.lr = cfg.train.stream.rate_at(epoch);
    const auto order = epoch_order(n, cfg.train.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += bs) {
      auto data = load_batch(train, order, b, std::min(n, b + bs), cfg, epoch, need_a, !need_a);
      nn::zero_grad(params);
      model.forward(data.batch, true, true);
      const auto res = model.backward(data.labels, 0.0, true);
      require_finite(res.loss, stage, epoch, batches);
      opt.step(log.lr);
      loss_sum += res.loss;
      ++batches;
    }
    log.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    log.val_top1 = selection_score(model, val, cfg, nullptr);
    log.seconds = seconds_since(t0);
    if (log.val_top1 >= best) {  // ties go to the later epoch
      best = log.val_top1;
      result.best_epoch = epoch;
      result.checkpoint = snapshot(epoch, log.val_top1);
    }
    result.epochs.push_back(log);
    if (progress) progress(stage, log);
  }
  return result;
}

TrainResult train_integrator(const Checkpoint* appearance_ckpt, const Checkpoint* pose_ckpt, const Dataset& train,
                             const Dataset& val, const ExperimentConfig& cfg, const IntegratorOptions& options,
                             FeatureCache* cache, const ProgressFn& progress) {
  cfg.validate();
  if (options.variant != ModelVariant::kIntegral && options.variant != ModelVariant::kFeatureFuse &&
      options.variant != ModelVariant::kNoGate) {
    throw std::invalid_argument(std::string("train_integrator: variant ") + to_string(options.variant) +
                                " is not a two-stream trained head");
  }
  const bool freeze = options.pretrained && options.freeze_streams;
  ModelConfig mc = cfg.model_config(options.variant);
  mc.lambda = options.lambda;
  mc.gate_source = options.gate_source;
  if (options.variant != ModelVariant::kIntegral) mc.lambda = 0.0;
  ActionModel<float> model(mc);
  nn::Rng rng(mix(mix(cfg.train.seed, kInitTag), 0x1E7 + static_cast<std::uint64_t>(options.variant)));
  model.init(rng);

  std::unique_ptr<FeatureCache> own_cache;
  if (options.pretrained) {
    if (!appearance_ckpt) throw std::invalid_argument("train_integrator: missing appearance stream checkpoint (stage train-stream --kind appearance)");
    if (!pose_ckpt) throw std::invalid_argument("train_integrator: missing pose stream checkpoint (stage train-stream --kind pose)");
    require_stream_checkpoint(*appearance_ckpt, StreamKind::kAppearance);
    require_stream_checkpoint(*pose_ckpt, StreamKind::kPose);
    load_parameters_with_prefix(model, *appearance_ckpt, "appearance.");
    load_parameters_with_prefix(model, *pose_ckpt, "pose.");
    if (freeze) {
      if (!cache) {
        own_cache = std::make_unique<FeatureCache>(*appearance_ckpt, *pose_ckpt, cfg);
        cache = own_cache.get();
      }
      nn::ParameterRefs<float> a, p;
      for (auto* q : model.stream_parameters()) (q->name.rfind("appearance.", 0) == 0 ? a : p).push_back(q);
      if (parameter_hash(a) != cache->appearance_hash() || parameter_hash(p) != cache->pose_hash()) {
        throw std::invalid_argument("train_integrator: feature cache was built from different stream checkpoints");
      }
    }
  }
  if (!freeze) cache = nullptr;
  for (auto* p : model.stream_parameters()) p->frozen = freeze;

  const std::string stage = std::string("train-integrator/") + to_string(options.variant);
  auto snapshot = [&](int epoch, double val_top1) {
    Checkpoint c = capture_checkpoint(model, "integrator");
    c.metadata = base_metadata(cfg, mc, rng);
    c.metadata["epoch"] = epoch;
    c.metadata["val_top1"] = val_top1;
    c.metadata["freeze_streams"] = freeze;
    c.metadata["pretrained"] = options.pretrained;
    return c;
  };

  TrainResult result;
  result.checkpoint = snapshot(-1, 0.0);
  double best = -1.0;
  const auto params = model.parameters();
  SgdOptimizer opt(params, cfg.train.momentum, cfg.train.weight_decay);
  const LrSchedule& schedule = options.pretrained ? cfg.train.integrator : cfg.train.stream;
  const std::size_t n = train.videos.size(), bs = static_cast<std::size_t>(cfg.train.batch_size);
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.lr = schedule.rate_at(epoch);
    const auto order = epoch_order(n, cfg.train.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += bs) {
      const std::size_t e = std::min(n, b + bs);
      nn::zero_grad(params);
      double loss = 0.0;
      if (cache) {
        std::vector<int> labels;
        std::vector<const Tensor<float>*> fa, fp;
        for (std::size_t i = b; i < e; ++i) {
          const auto& video = train.videos[order[i]];
          const auto& entry = cache->train(video, epoch);
          fa.push_back(&entry.appearance);
          fp.push_back(&entry.pose);
          labels.push_back(video.action);
        }
        model.head().forward(stack(fa), stack(fp), e - b, true);
        loss = model.head().backward(labels, mc.lambda).loss;
      } else {
        auto data = load_batch(train, order, b, e, cfg, epoch, true, true);
        model.forward(data.batch, true, true);
        loss = model.backward(data.labels, mc.lambda, true).loss;
      }
      require_finite(loss, stage, epoch, batches);
      opt.step(log.lr);
      loss_sum += loss;
      ++batches;
    }
    log.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    log.val_top1 = selection_score(model, val, cfg, cache);
    log.seconds = seconds_since(t0);
    if (log.val_top1 >= best) {  // ties go to the later epoch
      best = log.val_top1;
      result.best_epoch = epoch;
      result.checkpoint = snapshot(epoch, log.val_top1);
    }
    result.epochs.push_back(log);
    if (progress) progress(stage, log);
  }
  return result;
}

// --- ablations -----------------------------------------------------------------------

const AblationRow& AblationReport::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("ablation report has no row " + name);
}

AblationReport ablation_suite(const Checkpoint& appearance_ckpt, const Checkpoint& pose_ckpt, const Dataset& train,
                              const Dataset& val_in, const Dataset& val_out, const ExperimentConfig& cfg,
                              const AblationOptions& options, const ProgressFn& progress) {
  require_stream_checkpoint(appearance_ckpt, StreamKind::kAppearance);
  require_stream_checkpoint(pose_ckpt, StreamKind::kPose);
  FeatureCache cache(appearance_ckpt, pose_ckpt, cfg);
  const EvalOptions eval_opts{cfg.train.eval_clips, {}, {}};
  AblationReport report;

  auto add_row = [&](AblationRow row, const Checkpoint& ckpt, std::optional<double> weight) {
    EvalOptions o = eval_opts;
    o.score_average_weight = weight;
    auto in = evaluate(ckpt, val_in, cfg, o, &cache);
    auto out = evaluate(ckpt, val_out, cfg, o, &cache);
    row.in_context = std::move(in.report);
    row.out_of_context = std::move(out.report);
    row.in_context.name = row.out_of_context.name = row.name;
    row.in_videos = std::move(in.videos);
    row.out_videos = std::move(out.videos);
    if (progress) {
      EpochLog log;
      log.val_top1 = row.in_context.top1;
      log.train_loss = row.out_of_context.top1;
      progress("ablate/" + row.name, log);
    }
    report.rows.push_back(std::move(row));
  };
  auto train_head = [&](const IntegratorOptions& o) {
    return train_integrator(&appearance_ckpt, &pose_ckpt, train, val_in, cfg, o, &cache, {}).checkpoint;
  };

  add_row({"appearance_only", "appearance_only", {}, {}, {}, {}, {}, {}, {}}, appearance_ckpt, {});
  add_row({"pose_only", "pose_only", {}, {}, {}, {}, {}, {}, {}}, pose_ckpt, {});
  add_row({"feature_fuse", "feature_fuse", {}, {}, {}, {}, {}, {}, {}},
          train_head({ModelVariant::kFeatureFuse, 0.0, GateSource::kPose, true, true}), {});
  const Checkpoint averaged = make_score_average_checkpoint(appearance_ckpt, pose_ckpt);
  for (double w : options.score_weights) {
    add_row({"score_average_w=" + format_number(w), "score_average", {}, {}, w, {}, {}, {}, {}}, averaged, w);
  }
  add_row({"no_gate", "no_gate", {}, {}, {}, {}, {}, {}, {}},
          train_head({ModelVariant::kNoGate, 0.0, GateSource::kPose, true, true}), {});

  std::map<std::pair<double, GateSource>, Checkpoint> integral;
  auto integral_ckpt = [&](double lambda, GateSource source) -> const Checkpoint& {
    const auto key = std::make_pair(lambda, source);
    if (auto it = integral.find(key); it == integral.end()) {
      integral.emplace(key, train_head({ModelVariant::kIntegral, lambda, source, true, true}));
    }
    return integral.at(key);
  };
  for (double lambda : options.lambdas) {
    add_row({"integral_lambda=" + format_number(lambda), "integral", lambda, to_string(GateSource::kPose), {}, {}, {},
             {}, {}},
            integral_ckpt(lambda, GateSource::kPose), {});
  }
  for (GateSource source : options.gate_sources) {
    add_row({std::string("integral_gate=") + to_string(source), "integral", options.gate_source_lambda,
             to_string(source), {}, {}, {}, {}, {}},
            integral_ckpt(options.gate_source_lambda, source), {});
  }

  const auto& a = report.row("appearance_only");
  const auto& p = report.row("pose_only");
  report.oracle_in = oracle_selection(a.in_videos, p.in_videos);
  report.oracle_out = oracle_selection(a.out_videos, p.out_videos);
  return report;
}

}  // namespace integral_action
