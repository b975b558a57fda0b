#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "integral_action/backbone.hpp"
#include "integral_action/integrator.hpp"
#include "integral_action/nn.hpp"
#include "integral_action/tensor.hpp"

namespace integral_action {

enum class ModelVariant { kIntegral, kAppearanceOnly, kPoseOnly, kFeatureFuse, kNoGate, kScoreAverage };

const char* to_string(ModelVariant variant);
ModelVariant model_variant_from_string(const std::string& s);

struct ModelConfig {
  static constexpr double kWeakPosePriority = 1.5;
  static constexpr double kStrongPosePriority = 5.0;

  ModelVariant variant = ModelVariant::kIntegral;
  GateSource gate_source = GateSource::kPose;
  double lambda = kWeakPosePriority;
  int num_classes = 8;
  int common_width = 512;  // C
  int pool_factor = 1;     // pose frames per appearance frame
  double score_average_weight = 0.5;
  double head_init_sigma = 0.001;
  StreamConfig appearance;
  StreamConfig pose;

  bool uses_appearance() const { return variant != ModelVariant::kPoseOnly; }
  bool uses_pose() const { return variant != ModelVariant::kAppearanceOnly; }
  bool has_gate() const { return variant == ModelVariant::kIntegral; }
  void validate() const;
};

// Single-clip prediction.
struct Prediction {
  std::vector<double> video_probs;     // |C|, sums to 1
  Tensor<double> per_frame_probs;      // T x |C|
  std::optional<Tensor<double>> gate;  // T x C, gated variants only
};

// Row-wise softmax of N x K logits.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

// Per-frame affine map + softmax.
template <typename T>
Tensor<T> classify_frames(const Tensor<T>& features, nn::Linear<T>& classifier);

// Mean over frames of simplex rows.
std::vector<double> aggregate_probs(const Tensor<double>& per_frame);

// Cross entropy of the video probabilities plus lambda * gate regulariser when a gate exists.
double composite_loss(const Prediction& pred, int label, double lambda);

// w * a + (1 - w) * p.
Prediction score_average(const Prediction& pred_a, const Prediction& pred_p, double weight);

// Everything after the two streams: alignment, gating, aggregation, classifiers.
template <typename T>
class Head {
 public:
  struct Output {
    Tensor<T> frame_probs;  // (clips * T) x |C|
    Tensor<T> video_probs;  // clips x |C|
    Tensor<T> gate;         // (clips * T) x C; empty unless gated
    std::size_t clips = 0;
  };
  struct LossResult {
    double loss = 0.0;
    double classification = 0.0;
    double gate = 0.0;
    Tensor<T> grad_appearance;  // w.r.t. F_A; empty if unused
    Tensor<T> grad_pose;        // w.r.t. F_P (pre-pooling); empty if unused
  };

  explicit Head(const ModelConfig& cfg);

  void init(nn::Rng& rng);
  // f_a: (clips * T) x C_A, f_p: (clips * T_P) x C_P; either may be empty when unused.
  Output forward(const Tensor<T>& f_a, const Tensor<T>& f_p, std::size_t clips, bool training);
  // Loss on the most recent forward, with gradients accumulated into the parameters.
  LossResult backward(const std::vector<int>& labels, double lambda);
  nn::ParameterRefs<T> parameters();

  const ModelConfig& config() const { return cfg_; }

  // Replaces the gating block output with a constant (analysis hook).
  std::optional<double> forced_gate;

  nn::Linear<T> appearance_classifier, pose_classifier, classifier;
  AlignmentBlock<T> align_appearance, align_pose;
  GatingBlock<T> gating;

 private:
  ModelConfig cfg_;
  // Forward caches.
  Output last_;
  Tensor<T> f_a_, f_p_pooled_, a_aligned_, p_aligned_, pose_frame_probs_;
  std::size_t pose_rows_ = 0;
};

template <typename T>
class ActionModel {
 public:
  struct Batch {
    Tensor<T> appearance;  // (clips * T) x 3 x H_A x W_A
    Tensor<T> pose;        // (clips * T_P) x (K + 2B) x H_P x W_P
    std::size_t clips = 0;
  };
  struct Features {
    Tensor<T> appearance;  // (clips * T) x C_A
    Tensor<T> pose;        // (clips * T_P) x C_P
  };

  explicit ActionModel(const ModelConfig& cfg);

  void init(nn::Rng& rng);
  Features stream_forward(const Batch& batch, bool training);
  typename Head<T>::Output forward(const Batch& batch, bool training, bool streams_training);
  // Backpropagates the head loss; streams receive gradients only when train_streams.
  typename Head<T>::LossResult backward(const std::vector<int>& labels, double lambda, bool train_streams);
  std::vector<Prediction> predict(const Batch& batch);

  nn::ParameterRefs<T> parameters();
  nn::ParameterRefs<T> stream_parameters();
  const ModelConfig& config() const { return cfg_; }
  Stream<T>* appearance_stream() { return appearance_.get(); }
  Stream<T>* pose_stream() { return pose_.get(); }
  Head<T>& head() { return head_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Stream<T>> appearance_, pose_;
  Head<T> head_;
};

// Splits a batched head output into per-clip predictions.
template <typename T>
std::vector<Prediction> to_predictions(const typename Head<T>::Output& out);

}  // namespace integral_action
