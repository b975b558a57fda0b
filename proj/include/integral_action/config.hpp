#pragma once

// Experiment configuration: one JSON document with sections
// codec, sampling, streams, integrator, model, synth, train.
// Every key is optional; missing keys keep the toy defaults below.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "integral_action/backbone.hpp"
#include "integral_action/model.hpp"
#include "integral_action/pose_codec.hpp"
#include "integral_action/sampling.hpp"
#include "integral_action/synth.hpp"

namespace integral_action {

struct SamplingConfig {
  ClipSpec clip{8, 4, ClipMode::kTrainRandomStart};
  AugmentConfig augment;
  bool augment_enabled = true;
  // Appearance pixels in [0, 1] are standardised per channel: (x - mean) / std.
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> std{0.5f, 0.5f, 0.5f};
};

struct LrSchedule {
  double initial = 1e-2;
  std::vector<int> decay_epochs;
  double factor = 10.0;
  int epochs = 20;

  double rate_at(int epoch) const;
  void validate(const char* what) const;
};

struct TrainConfig {
  int batch_size = 8;
  LrSchedule stream{1e-2, {14, 18}, 10.0, 20};
  // Toy epochs are ~40 steps, so the integration stage runs at the pre-training rate.
  LrSchedule integrator{1e-2, {6, 8}, 10.0, 10};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  int eval_clips = 10;
  int selection_clips = 1;

  void validate() const;
};

struct ExperimentConfig {
  CodecConfig codec{0.5f, 5, 0.1f, 1.0f, 16, 16};
  SamplingConfig sampling;
  StreamConfig appearance;
  StreamConfig pose;
  // Integrator / model section fields are folded into a ModelConfig template; the
  // per-stream fields inside it are overwritten from `appearance` / `pose`.
  ModelConfig model;
  SynthConfig synth;
  TrainConfig train;

  ExperimentConfig();

  // Toy defaults used by tests and the synthetic benchmark.
  static ExperimentConfig toy();
  // The network sizes and schedule of the full-scale setting.
  static ExperimentConfig full_scale();

  ModelConfig model_config(ModelVariant variant) const;
  Skeleton skeleton() const { return Skeleton::stick_figure(); }
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Throws std::invalid_argument on unknown sections/keys or invalid values.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

}  // namespace integral_action
