#include "integral_action/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace integral_action {

const char* to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kIntegral: return "integral";
    case ModelVariant::kAppearanceOnly: return "appearance_only";
    case ModelVariant::kPoseOnly: return "pose_only";
    case ModelVariant::kFeatureFuse: return "feature_fuse";
    case ModelVariant::kNoGate: return "no_gate";
    case ModelVariant::kScoreAverage: return "score_average";
  }
  return "?";
}

ModelVariant model_variant_from_string(const std::string& s) {
  for (auto v : {ModelVariant::kIntegral, ModelVariant::kAppearanceOnly, ModelVariant::kPoseOnly,
                 ModelVariant::kFeatureFuse, ModelVariant::kNoGate, ModelVariant::kScoreAverage}) {
    if (s == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown model variant: " + s);
}

void ModelConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("model: lambda must be >= 0");
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  if (common_width < 1) throw std::invalid_argument("model: common_width must be >= 1");
  if (pool_factor < 1) throw std::invalid_argument("model: pool_factor must be >= 1");
  if (score_average_weight < 0.0 || score_average_weight > 1.0) {
    throw std::invalid_argument("model: score_average_weight must lie in [0, 1]");
  }
  if (appearance.kind != StreamKind::kAppearance || pose.kind != StreamKind::kPose) {
    throw std::invalid_argument("model: stream configs have the wrong kind");
  }
  if (uses_appearance()) appearance.validate();
  if (uses_pose()) pose.validate();
  if (uses_appearance() && uses_pose() && pose.frames != appearance.frames * pool_factor) {
    throw std::invalid_argument("model: pose frames must equal appearance frames * pool_factor");
  }
  if (variant == ModelVariant::kIntegral && gate_source == GateSource::kNone) {
    throw std::invalid_argument("model: the integral variant needs a gate source (use no_gate instead)");
  }
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * k;
    const double m = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - m);
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - m) / sum);
    }
  }
  return out;
}

template <typename T>
Tensor<T> classify_frames(const Tensor<T>& features, nn::Linear<T>& classifier) {
  return softmax_rows(classifier.forward(features));
}

std::vector<double> aggregate_probs(const Tensor<double>& per_frame) {
  if (per_frame.rank() != 2 || per_frame.dim(0) == 0) {
    throw std::invalid_argument("aggregate_probs: need at least one frame");
  }
  const std::size_t t = per_frame.dim(0), k = per_frame.dim(1);
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < k; ++j) out[j] += per_frame.at(i, j);
  }
  for (auto& v : out) v /= static_cast<double>(t);
  return out;
}

namespace {

constexpr double kMinProb = 1e-12;

}  // namespace

double composite_loss(const Prediction& pred, int label, double lambda) {
  if (label < 0 || static_cast<std::size_t>(label) >= pred.video_probs.size()) {
    throw std::invalid_argument("composite_loss: label out of range");
  }
  double loss = -std::log(std::max(pred.video_probs[label], kMinProb));
  if (pred.gate && lambda != 0.0) loss += lambda * gate_regularizer(*pred.gate);
  return loss;
}

Prediction score_average(const Prediction& pred_a, const Prediction& pred_p, double weight) {
  if (pred_a.video_probs.size() != pred_p.video_probs.size()) {
    throw std::invalid_argument("score_average: class count mismatch");
  }
  Prediction out;
  out.video_probs.resize(pred_a.video_probs.size());
  for (std::size_t k = 0; k < out.video_probs.size(); ++k) {
    out.video_probs[k] = weight * pred_a.video_probs[k] + (1.0 - weight) * pred_p.video_probs[k];
  }
  if (pred_a.per_frame_probs.shape() == pred_p.per_frame_probs.shape()) {
    out.per_frame_probs = Tensor<double>(pred_a.per_frame_probs.shape());
    for (std::size_t i = 0; i < out.per_frame_probs.size(); ++i) {
      out.per_frame_probs[i] =
          weight * pred_a.per_frame_probs[i] + (1.0 - weight) * pred_p.per_frame_probs[i];
    }
  }
  return out;
}

// --- Head --------------------------------------------------------------------

template <typename T>
Head<T>::Head(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int ca = cfg_.appearance.output_channels();
  const int cp = cfg_.pose.output_channels();
  const int c = cfg_.common_width;
  const int k = cfg_.num_classes;
  switch (cfg_.variant) {
    case ModelVariant::kAppearanceOnly:
      appearance_classifier = nn::Linear<T>("appearance_classifier", ca, k);
      break;
    case ModelVariant::kPoseOnly:
      pose_classifier = nn::Linear<T>("pose_classifier", cp, k);
      break;
    case ModelVariant::kScoreAverage:
      appearance_classifier = nn::Linear<T>("appearance_classifier", ca, k);
      pose_classifier = nn::Linear<T>("pose_classifier", cp, k);
      break;
    case ModelVariant::kFeatureFuse:
      classifier = nn::Linear<T>("classifier", ca + cp, k);
      break;
    case ModelVariant::kIntegral: {
      const int gate_in = cfg_.gate_source == GateSource::kPose         ? cp
                          : cfg_.gate_source == GateSource::kAppearance ? ca
                                                                        : ca + cp;
      gating = GatingBlock<T>("integrator.cgb", gate_in, c);
      [[fallthrough]];
    }
    case ModelVariant::kNoGate:
      align_appearance = AlignmentBlock<T>("integrator.tcb_a", ca, c);
      align_pose = AlignmentBlock<T>("integrator.tcb_p", cp, c);
      classifier = nn::Linear<T>("classifier", c, k);
      break;
  }
}

template <typename T>
void Head<T>::init(nn::Rng& rng) {
  const double s = cfg_.head_init_sigma;
  switch (cfg_.variant) {
    case ModelVariant::kAppearanceOnly: appearance_classifier.init(rng, s); break;
    case ModelVariant::kPoseOnly: pose_classifier.init(rng, s); break;
    case ModelVariant::kScoreAverage:
      appearance_classifier.init(rng, s);
      pose_classifier.init(rng, s);
      break;
    case ModelVariant::kFeatureFuse: classifier.init(rng, s); break;
    case ModelVariant::kIntegral: gating.init(rng, s); [[fallthrough]];
    case ModelVariant::kNoGate:
      align_appearance.init(rng, s);
      align_pose.init(rng, s);
      classifier.init(rng, s);
      break;
  }
}

template <typename T>
nn::ParameterRefs<T> Head<T>::parameters() {
  nn::ParameterRefs<T> out;
  switch (cfg_.variant) {
    case ModelVariant::kAppearanceOnly: appearance_classifier.collect(out); break;
    case ModelVariant::kPoseOnly: pose_classifier.collect(out); break;
    case ModelVariant::kScoreAverage:
      appearance_classifier.collect(out);
      pose_classifier.collect(out);
      break;
    case ModelVariant::kFeatureFuse: classifier.collect(out); break;
    case ModelVariant::kIntegral:
    case ModelVariant::kNoGate:
      align_appearance.collect(out);
      align_pose.collect(out);
      if (cfg_.variant == ModelVariant::kIntegral) gating.collect(out);
      classifier.collect(out);
      break;
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> clip_means(const Tensor<T>& rows, std::size_t clips) {
  const std::size_t frames = rows.dim(0) / clips, k = rows.dim(1);
  Tensor<T> out({clips, k});
  for (std::size_t b = 0; b < clips; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < frames; ++t) acc += rows.at(b * frames + t, j);
      out.at(b, j) = static_cast<T>(acc / static_cast<double>(frames));
    }
  }
  return out;
}

template <typename T>
void require_rows(const Tensor<T>& f, std::size_t clips, std::size_t frames, std::size_t width,
                  const char* what) {
  if (f.rank() != 2 || f.dim(0) != clips * frames || f.dim(1) != width) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(clips * frames) + " x " +
                                std::to_string(width) + " features, got " + shape_string(f.shape()));
  }
}

}  // namespace

template <typename T>
typename Head<T>::Output Head<T>::forward(const Tensor<T>& f_a, const Tensor<T>& f_p, std::size_t clips,
                                          bool training) {
  if (clips == 0) throw std::invalid_argument("head: empty batch");
  const auto ta = static_cast<std::size_t>(cfg_.appearance.frames);
  const auto tp = static_cast<std::size_t>(cfg_.pose.frames);
  const auto factor = static_cast<std::size_t>(cfg_.pool_factor);
  if (cfg_.uses_appearance()) {
    require_rows(f_a, clips, ta, static_cast<std::size_t>(cfg_.appearance.output_channels()), "appearance features");
  }
  if (cfg_.uses_pose()) {
    require_rows(f_p, clips, tp, static_cast<std::size_t>(cfg_.pose.output_channels()), "pose features");
    pose_rows_ = f_p.dim(0);
  }
  Output out;
  out.clips = clips;
  f_a_ = f_a;
  switch (cfg_.variant) {
    case ModelVariant::kAppearanceOnly:
      out.frame_probs = classify_frames(f_a, appearance_classifier);
      break;
    case ModelVariant::kPoseOnly:
      out.frame_probs = classify_frames(f_p, pose_classifier);
      break;
    case ModelVariant::kScoreAverage: {
      const Tensor<T> pa = classify_frames(f_a, appearance_classifier);
      const Tensor<T> pp = temporal_avg_pool(classify_frames(f_p, pose_classifier), factor);
      const double w = cfg_.score_average_weight;
      out.frame_probs = Tensor<T>(pa.shape());
      for (std::size_t i = 0; i < pa.size(); ++i) {
        out.frame_probs[i] = static_cast<T>(w * pa[i] + (1.0 - w) * pp[i]);
      }
      break;
    }
    case ModelVariant::kFeatureFuse:
      f_p_pooled_ = temporal_avg_pool(f_p, factor);
      out.frame_probs = classify_frames(concat_channels(f_a, f_p_pooled_), classifier);
      break;
    case ModelVariant::kNoGate:
      f_p_pooled_ = temporal_avg_pool(f_p, factor);
      a_aligned_ = align_appearance.forward(f_a);
      p_aligned_ = align_pose.forward(f_p_pooled_);
      out.frame_probs = classify_frames(no_gate_integrate(a_aligned_, p_aligned_), classifier);
      break;
    case ModelVariant::kIntegral: {
      f_p_pooled_ = temporal_avg_pool(f_p, factor);
      if (forced_gate) {
        out.gate = Tensor<T>({f_a.dim(0), static_cast<std::size_t>(cfg_.common_width)},
                             static_cast<T>(*forced_gate));
      } else {
        switch (cfg_.gate_source) {
          case GateSource::kPose: out.gate = gating.forward(f_p_pooled_, training); break;
          case GateSource::kAppearance: out.gate = gating.forward(f_a, training); break;
          default: out.gate = gating.forward(concat_channels(f_a, f_p_pooled_), training); break;
        }
      }
      a_aligned_ = align_appearance.forward(f_a);
      p_aligned_ = align_pose.forward(f_p_pooled_);
      out.frame_probs = classify_frames(integrate(a_aligned_, p_aligned_, out.gate), classifier);
      break;
    }
  }
  out.video_probs = clip_means(out.frame_probs, clips);
  last_ = out;
  return out;
}

template <typename T>
typename Head<T>::LossResult Head<T>::backward(const std::vector<int>& labels, double lambda) {
  if (cfg_.variant == ModelVariant::kScoreAverage) {
    throw std::logic_error("score_average combines pre-trained heads and is not trained");
  }
  const std::size_t clips = last_.clips;
  if (labels.size() != clips) throw std::invalid_argument("head: label count does not match batch");
  const std::size_t k = last_.video_probs.dim(1);
  const std::size_t rows = last_.frame_probs.dim(0), frames = rows / clips;

  LossResult res;
  std::vector<double> dvideo(clips * k, 0.0);
  for (std::size_t b = 0; b < clips; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw std::invalid_argument("head: label out of range");
    const double p = std::max(static_cast<double>(last_.video_probs.at(b, y)), kMinProb);
    res.classification -= std::log(p) / static_cast<double>(clips);
    dvideo[b * k + y] = -1.0 / (p * static_cast<double>(clips));
  }
  // Softmax backward on every frame row.
  Tensor<T> dz({rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t b = r / frames;
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      dot += dvideo[b * k + j] / static_cast<double>(frames) * last_.frame_probs.at(r, j);
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double q = last_.frame_probs.at(r, j);
      dz.at(r, j) = static_cast<T>(q * (dvideo[b * k + j] / static_cast<double>(frames) - dot));
    }
  }

  const auto factor = static_cast<std::size_t>(cfg_.pool_factor);
  Tensor<T> d_pooled;
  switch (cfg_.variant) {
    case ModelVariant::kAppearanceOnly:
      res.grad_appearance = appearance_classifier.backward(dz);
      break;
    case ModelVariant::kPoseOnly:
      res.grad_pose = pose_classifier.backward(dz);
      break;
    case ModelVariant::kFeatureFuse:
      split_channels(classifier.backward(dz), f_a_.dim(1), res.grad_appearance, d_pooled);
      break;
    case ModelVariant::kNoGate: {
      const Tensor<T> d_f = classifier.backward(dz);
      res.grad_appearance = align_appearance.backward(d_f);
      d_pooled = align_pose.backward(d_f);
      break;
    }
    case ModelVariant::kIntegral: {
      const Tensor<T> d_f = classifier.backward(dz);
      auto g = integrate_backward(a_aligned_, p_aligned_, last_.gate, d_f);
      res.gate = gate_regularizer(last_.gate);
      if (lambda != 0.0) {
        const Tensor<T> dreg = gate_regularizer_grad(last_.gate);
        for (std::size_t i = 0; i < g.gate.size(); ++i) g.gate[i] += static_cast<T>(lambda * dreg[i]);
      }
      res.grad_appearance = align_appearance.backward(g.appearance);
      d_pooled = align_pose.backward(g.pose);
      if (!forced_gate) {
        const Tensor<T> d_in = gating.backward(g.gate);
        switch (cfg_.gate_source) {
          case GateSource::kPose: nn::add_inplace(d_pooled, d_in); break;
          case GateSource::kAppearance: nn::add_inplace(res.grad_appearance, d_in); break;
          default: {
            Tensor<T> da, dp;
            split_channels(d_in, f_a_.dim(1), da, dp);
            nn::add_inplace(res.grad_appearance, da);
            nn::add_inplace(d_pooled, dp);
            break;
          }
        }
      }
      break;
    }
    case ModelVariant::kScoreAverage: break;
  }
  if (!d_pooled.empty()) res.grad_pose = temporal_avg_pool_backward(d_pooled, factor);
  res.loss = res.classification + lambda * res.gate;
  return res;
}

// --- ActionModel ---------------------------------------------------------------

template <typename T>
ActionModel<T>::ActionModel(const ModelConfig& cfg) : cfg_(cfg), head_(cfg) {
  if (cfg_.uses_appearance()) appearance_ = std::make_unique<Stream<T>>(cfg_.appearance, "appearance");
  if (cfg_.uses_pose()) pose_ = std::make_unique<Stream<T>>(cfg_.pose, "pose");
}

template <typename T>
void ActionModel<T>::init(nn::Rng& rng) {
  if (appearance_) appearance_->init(rng);
  if (pose_) pose_->init(rng);
  head_.init(rng);
}

template <typename T>
typename ActionModel<T>::Features ActionModel<T>::stream_forward(const Batch& batch, bool training) {
  Features f;
  if (appearance_) {
    if (batch.appearance.empty()) throw std::invalid_argument(std::string(to_string(cfg_.variant)) + " needs an appearance clip");
    f.appearance = appearance_->forward(batch.appearance, static_cast<std::size_t>(cfg_.appearance.frames), training);
  }
  if (pose_) {
    if (batch.pose.empty()) throw std::invalid_argument(std::string(to_string(cfg_.variant)) + " needs a pose clip");
    f.pose = pose_->forward(batch.pose, static_cast<std::size_t>(cfg_.pose.frames), training);
  }
  return f;
}

template <typename T>
typename Head<T>::Output ActionModel<T>::forward(const Batch& batch, bool training, bool streams_training) {
  const Features f = stream_forward(batch, streams_training);
  return head_.forward(f.appearance, f.pose, batch.clips, training);
}

template <typename T>
typename Head<T>::LossResult ActionModel<T>::backward(const std::vector<int>& labels, double lambda,
                                                      bool train_streams) {
  auto res = head_.backward(labels, lambda);
  if (train_streams) {
    if (appearance_) appearance_->backward(res.grad_appearance);
    if (pose_) pose_->backward(res.grad_pose);
  }
  return res;
}

template <typename T>
std::vector<Prediction> ActionModel<T>::predict(const Batch& batch) {
  return to_predictions<T>(forward(batch, false, false));
}

template <typename T>
nn::ParameterRefs<T> ActionModel<T>::stream_parameters() {
  nn::ParameterRefs<T> out;
  if (appearance_) {
    auto p = appearance_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (pose_) {
    auto p = pose_->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename T>
nn::ParameterRefs<T> ActionModel<T>::parameters() {
  auto out = stream_parameters();
  auto h = head_.parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

template <typename T>
std::vector<Prediction> to_predictions(const typename Head<T>::Output& out) {
  const std::size_t clips = out.clips, k = out.video_probs.dim(1);
  const std::size_t frames = out.frame_probs.dim(0) / clips;
  std::vector<Prediction> preds(clips);
  for (std::size_t b = 0; b < clips; ++b) {
    auto& p = preds[b];
    p.video_probs.resize(k);
    for (std::size_t j = 0; j < k; ++j) p.video_probs[j] = out.video_probs.at(b, j);
    p.per_frame_probs = Tensor<double>({frames, k});
    for (std::size_t i = 0; i < frames * k; ++i) p.per_frame_probs[i] = out.frame_probs[b * frames * k + i];
    if (!out.gate.empty()) {
      const std::size_t gf = out.gate.dim(0) / clips, c = out.gate.dim(1);
      Tensor<double> g({gf, c});
      for (std::size_t i = 0; i < gf * c; ++i) g[i] = out.gate[b * gf * c + i];
      p.gate = std::move(g);
    }
  }
  return preds;
}

template Tensor<float> softmax_rows<float>(const Tensor<float>&);
template Tensor<double> softmax_rows<double>(const Tensor<double>&);
template Tensor<float> classify_frames<float>(const Tensor<float>&, nn::Linear<float>&);
template Tensor<double> classify_frames<double>(const Tensor<double>&, nn::Linear<double>&);
template class Head<float>;
template class Head<double>;
template class ActionModel<float>;
template class ActionModel<double>;
template std::vector<Prediction> to_predictions<float>(const Head<float>::Output&);
template std::vector<Prediction> to_predictions<double>(const Head<double>::Output&);

}  // namespace integral_action
