#pragma once

// Staged training (streams, then integrator on frozen streams), evaluation, gate
// analytics and the ablation runner.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "integral_action/checkpoint.hpp"
#include "integral_action/config.hpp"
#include "integral_action/model.hpp"
#include "integral_action/synth.hpp"

namespace integral_action {

struct Dataset {
  Split split = Split::kTrain;
  std::vector<VideoDescriptor> videos;
};

Dataset make_synthetic_dataset(Split split, const ExperimentConfig& cfg, std::uint64_t seed);

// --- clips -----------------------------------------------------------------------

struct ClipPlan {
  std::vector<int> appearance_frames;
  std::vector<int> pose_frames;
  AugmentSpec augment;  // in appearance pixels; identity for evaluation
};

struct ClipTensors {
  Tensor<float> appearance;  // T x 3 x H_A x W_A (empty unless requested)
  Tensor<float> pose;        // T_P x (K + 2B) x H_P x W_P (empty unless requested)
};

// Random start and augmentation, fixed by (train seed, epoch, video seed).
ClipPlan train_clip_plan(const VideoDescriptor& video, const ExperimentConfig& cfg, int epoch);
// Clip `index` of `count` uniformly spaced clips, no augmentation.
ClipPlan eval_clip_plan(const ExperimentConfig& cfg, int index, int count);
ClipTensors load_clip(const VideoDescriptor& video, const ExperimentConfig& cfg, const ClipPlan& plan,
                      bool need_appearance, bool need_pose);

// Per-epoch visiting order of the training videos.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch);

// --- optimisation ------------------------------------------------------------------

// SGD with momentum; weight decay is added to the gradient of every trainable tensor.
class SgdOptimizer {
 public:
  SgdOptimizer(nn::ParameterRefs<float> params, double momentum, double weight_decay);
  void step(double lr);
  const nn::ParameterRefs<float>& parameters() const { return params_; }

 private:
  nn::ParameterRefs<float> params_;
  std::vector<Tensor<float>> velocity_;
  double momentum_, weight_decay_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;  // best in-context validation epoch
  std::vector<EpochLog> epochs;
  int best_epoch = -1;    // -1 when no epoch ran (checkpoint is the initialisation)
};

using ProgressFn = std::function<void(const std::string& stage, const EpochLog&)>;

// --- frozen-stream features ----------------------------------------------------------

// Features of frozen, pre-trained streams (eval-mode batch norm), memoised per clip so
// that every head trained on top of the same streams sees identical inputs.
class FeatureCache {
 public:
  struct Entry {
    Tensor<float> appearance;  // T x C_A
    Tensor<float> pose;        // T_P x C_P
  };

  FeatureCache(const Checkpoint& appearance_ckpt, const Checkpoint& pose_ckpt, const ExperimentConfig& cfg);

  const Entry& train(const VideoDescriptor& video, int epoch);
  const Entry& eval(const VideoDescriptor& video, int index, int count);
  std::size_t size() const { return entries_.size(); }
  std::uint64_t appearance_hash() const { return hash_a_; }
  std::uint64_t pose_hash() const { return hash_p_; }

 private:
  const Entry& compute(const std::string& key, const VideoDescriptor& video, const ClipPlan& plan);

  ExperimentConfig cfg_;
  std::unique_ptr<ActionModel<float>> appearance_, pose_;
  std::uint64_t hash_a_ = 0, hash_p_ = 0;
  std::unordered_map<std::string, Entry> entries_;
};

// --- training ----------------------------------------------------------------------

// Pre-trains one stream with its own classifier on L_cls.
TrainResult train_stream(StreamKind kind, const Dataset& train, const Dataset& val, const ExperimentConfig& cfg,
                         const ProgressFn& progress = {});

struct IntegratorOptions {
  ModelVariant variant = ModelVariant::kIntegral;  // integral, feature_fuse or no_gate
  double lambda = ModelConfig::kWeakPosePriority;
  GateSource gate_source = GateSource::kPose;
  bool freeze_streams = true;
  bool pretrained = true;  // false: streams start from random initialisation (implies training them)
};

// Trains the integrator and classifier on top of the two streams.
// With pretrained streams both checkpoints are required; with freeze_streams the stream
// parameters are excluded from the optimiser and left bit-identical.
TrainResult train_integrator(const Checkpoint* appearance_ckpt, const Checkpoint* pose_ckpt, const Dataset& train,
                             const Dataset& val, const ExperimentConfig& cfg, const IntegratorOptions& options,
                             FeatureCache* cache = nullptr, const ProgressFn& progress = {});

// Two single-stream checkpoints combined into one score-average model.
Checkpoint make_score_average_checkpoint(const Checkpoint& appearance_ckpt, const Checkpoint& pose_ckpt);

// Rebuilds a model of the checkpoint's variant and loads every parameter.
std::unique_ptr<ActionModel<float>> model_from_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                                          std::optional<double> score_average_weight = {});

// --- evaluation ----------------------------------------------------------------------

struct MetricsReport {
  std::string name;
  std::string variant;
  std::string split;
  std::size_t videos = 0;
  int top_k = 5;
  double top1 = 0.0;  // percent
  double topk = 0.0;  // percent
  std::map<int, double> per_class_top1;
  std::optional<double> gate_mean;
  std::optional<double> gate_var;
  std::map<int, double> per_class_gate_mean;
};

struct VideoResult {
  std::string video_id;
  int label = 0;
  int context = 0;
  std::vector<double> probs;         // averaged over clips
  std::optional<double> gate_mean;   // G averaged over clips, frames and channels
};

struct EvalResult {
  MetricsReport report;
  std::vector<VideoResult> videos;
  double mean_loss = 0.0;  // cross entropy of the clip-averaged probabilities
};

struct EvalOptions {
  int clips_per_video = 10;
  std::optional<double> forced_gate;
  std::optional<double> score_average_weight;
};

EvalResult evaluate(const Checkpoint& ckpt, const Dataset& data, const ExperimentConfig& cfg,
                    const EvalOptions& options, FeatureCache* cache = nullptr);

// Scores per-video probabilities: top-1, top-min(5, |C|-1), per-class top-1, gate stats.
MetricsReport score_videos(const std::vector<VideoResult>& videos, int num_classes);

// top-k accuracy in percent over (probs, label) pairs.
double top_k_accuracy(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels, int k);

struct GateStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance of the per-video means
  std::map<int, double> per_class_mean;
  std::vector<double> per_video;
};

// Throws std::invalid_argument when the videos carry no gate values.
GateStats gate_statistics(const std::vector<VideoResult>& videos);
GateStats gate_statistics(const Checkpoint& ckpt, const Dataset& data, const ExperimentConfig& cfg,
                          FeatureCache* cache = nullptr);

// Percent of videos where either prediction's top-1 is correct.
double oracle_selection(const std::vector<std::vector<double>>& preds_a,
                        const std::vector<std::vector<double>>& preds_p, const std::vector<int>& labels);
double oracle_selection(const std::vector<VideoResult>& a, const std::vector<VideoResult>& p);

// --- ablations -----------------------------------------------------------------------

struct AblationOptions {
  std::vector<double> lambdas{0.0, 1.0, 1.5, 5.0};
  std::vector<double> score_weights{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<GateSource> gate_sources{GateSource::kPose, GateSource::kAppearance, GateSource::kBoth};
  double gate_source_lambda = ModelConfig::kWeakPosePriority;
};

struct AblationRow {
  std::string name;
  std::string variant;
  std::optional<double> lambda;
  std::optional<std::string> gate_source;
  std::optional<double> weight;
  MetricsReport in_context;
  MetricsReport out_of_context;
  // Per-video results, kept for oracle / gate analysis; not serialised.
  std::vector<VideoResult> in_videos, out_videos;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  double oracle_in = 0.0;
  double oracle_out = 0.0;

  const AblationRow& row(const std::string& name) const;
};

AblationReport ablation_suite(const Checkpoint& appearance_ckpt, const Checkpoint& pose_ckpt, const Dataset& train,
                              const Dataset& val_in, const Dataset& val_out, const ExperimentConfig& cfg,
                              const AblationOptions& options = {}, const ProgressFn& progress = {});

// Verifies a checkpoint is a pre-trained single stream of the given kind.
void require_stream_checkpoint(const Checkpoint& ckpt, StreamKind kind);

}  // namespace integral_action
