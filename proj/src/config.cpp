#include "integral_action/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

namespace integral_action {

using nlohmann::json;

double LrSchedule::rate_at(int epoch) const {
  double lr = initial;
  for (int e : decay_epochs) {
    if (epoch >= e) lr /= factor;
  }
  return lr;
}

void LrSchedule::validate(const char* what) const {
  if (!(initial > 0.0)) throw std::invalid_argument(std::string(what) + ": learning rate must be > 0");
  if (!(factor > 1.0)) throw std::invalid_argument(std::string(what) + ": decay factor must be > 1");
  if (epochs < 0) throw std::invalid_argument(std::string(what) + ": epochs must be >= 0");
  if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end())) {
    throw std::invalid_argument(std::string(what) + ": decay epochs must be ascending");
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  stream.validate("train.stream");
  integrator.validate("train.integrator");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (eval_clips < 1 || selection_clips < 1) throw std::invalid_argument("train: clip counts must be >= 1");
}

ExperimentConfig::ExperimentConfig() {
  appearance.kind = StreamKind::kAppearance;
  appearance.input_channels = 3;
  pose.kind = StreamKind::kPose;
  pose.input_channels = Skeleton::stick_figure().num_channels();
  pose.height = codec.height;
  pose.width = codec.width;
  pose.stem_kernel = 3;
  model.common_width = pose.stage_widths.back();  // C equals the pose feature width, as at full scale
  model.appearance = appearance;
  model.pose = pose;
}

ExperimentConfig ExperimentConfig::toy() { return ExperimentConfig(); }

ExperimentConfig ExperimentConfig::full_scale() {
  ExperimentConfig cfg;
  cfg.codec.height = cfg.codec.width = 56;
  cfg.sampling.clip = {8, 8, ClipMode::kTrainRandomStart};
  cfg.appearance.stage_widths = {256, 512, 1024, 2048};
  cfg.appearance.height = cfg.appearance.width = 224;
  cfg.pose.stage_widths = {64, 128, 256, 512};
  cfg.pose.height = cfg.pose.width = 56;
  cfg.model.pool_factor = 4;
  cfg.model.common_width = 512;
  cfg.synth.appearance_height = cfg.synth.appearance_width = 224;
  cfg.synth.pose_height = cfg.synth.pose_width = 56;
  cfg.train.batch_size = 32;
  cfg.train.stream = {1e-2, {20, 30}, 10.0, 40};
  cfg.train.integrator = {1e-3, {10, 15}, 10.0, 20};
  return cfg;
}

ModelConfig ExperimentConfig::model_config(ModelVariant variant) const {
  ModelConfig m = model;
  m.variant = variant;
  m.appearance = appearance;
  m.appearance.frames = sampling.clip.frames;
  m.pose = pose;
  m.pose.frames = sampling.clip.frames * model.pool_factor;
  m.pose.input_channels = skeleton().num_channels();
  m.pose.height = codec.height;
  m.pose.width = codec.width;
  if (variant != ModelVariant::kIntegral && m.gate_source == GateSource::kNone) m.gate_source = GateSource::kPose;
  return m;
}

void ExperimentConfig::validate() const {
  codec.validate();
  synth.validate();
  train.validate();
  if (sampling.clip.frames < 1 || sampling.clip.interval < 1) {
    throw std::invalid_argument("sampling: frames and interval must be >= 1");
  }
  for (float v : sampling.std) {
    if (!(v > 0.0f)) throw std::invalid_argument("sampling: std must be > 0");
  }
  if (model.pool_factor > 1 && sampling.clip.interval % model.pool_factor != 0) {
    throw std::invalid_argument("sampling: interval must be divisible by model.pool_factor");
  }
  if (pose.height != codec.height || pose.width != codec.width) {
    throw std::invalid_argument("streams.pose: size must match the codec canvas");
  }
  if (synth.num_classes != model.num_classes) {
    throw std::invalid_argument("model.num_classes must equal synth.num_classes");
  }
  if (synth.appearance_height != appearance.height || synth.appearance_width != appearance.width) {
    throw std::invalid_argument("synth appearance size must match streams.appearance");
  }
  if (synth.pose_height != codec.height || synth.pose_width != codec.width) {
    throw std::invalid_argument("synth pose canvas must match the codec canvas");
  }
  ModelConfig m = model_config(ModelVariant::kIntegral);
  m.validate();
}

// --- JSON --------------------------------------------------------------------

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument(std::string("config: section '") + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw std::invalid_argument(std::string("config: unknown key '") + section + "." + key + "'");
  }
}

template <typename V>
void get(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

json stream_to_json(const StreamConfig& s) {
  return {{"stage_widths", s.stage_widths}, {"blocks_per_stage", s.blocks_per_stage},
          {"shift_fraction", s.shift_fraction}, {"height", s.height}, {"width", s.width},
          {"stem_kernel", s.stem_kernel}, {"init_sigma", s.init_sigma}};
}

void stream_from_json(const json& j, const char* name, StreamConfig& s) {
  check_keys(j, name, {"stage_widths", "blocks_per_stage", "shift_fraction", "height", "width", "stem_kernel",
                       "init_sigma"});
  get(j, "stage_widths", s.stage_widths);
  get(j, "blocks_per_stage", s.blocks_per_stage);
  get(j, "shift_fraction", s.shift_fraction);
  get(j, "height", s.height);
  get(j, "width", s.width);
  get(j, "stem_kernel", s.stem_kernel);
  get(j, "init_sigma", s.init_sigma);
}

json schedule_to_json(const LrSchedule& s) {
  return {{"lr", s.initial}, {"decay_epochs", s.decay_epochs}, {"decay_factor", s.factor}, {"epochs", s.epochs}};
}

void schedule_from_json(const json& j, const char* name, LrSchedule& s) {
  check_keys(j, name, {"lr", "decay_epochs", "decay_factor", "epochs"});
  get(j, "lr", s.initial);
  get(j, "decay_epochs", s.decay_epochs);
  get(j, "decay_factor", s.factor);
  get(j, "epochs", s.epochs);
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json j;
  j["codec"] = {{"sigma", c.codec.sigma}, {"max_persons", c.codec.max_persons},
                {"min_person_score", c.codec.min_person_score}, {"paf_line_width", c.codec.paf_line_width},
                {"height", c.codec.height}, {"width", c.codec.width}};
  j["sampling"] = {{"frames", c.sampling.clip.frames}, {"interval", c.sampling.clip.interval},
                   {"augment", c.sampling.augment_enabled}, {"scale_min", c.sampling.augment.scale_min},
                   {"scale_max", c.sampling.augment.scale_max},
                   {"translate_fraction", c.sampling.augment.translate_fraction},
                   {"flip_probability", c.sampling.augment.flip_probability},
                   {"mean", c.sampling.mean}, {"std", c.sampling.std}};
  j["streams"] = {{"appearance", stream_to_json(c.appearance)}, {"pose", stream_to_json(c.pose)}};
  j["integrator"] = {{"common_width", c.model.common_width}, {"gate_source", to_string(c.model.gate_source)},
                     {"lambda", c.model.lambda}};
  j["model"] = {{"variant", to_string(c.model.variant)}, {"num_classes", c.model.num_classes},
                {"pool_factor", c.model.pool_factor}, {"score_average_weight", c.model.score_average_weight},
                {"head_init_sigma", c.model.head_init_sigma}};
  const auto& s = c.synth;
  j["synth"] = {{"num_classes", s.num_classes}, {"frames_per_video", s.frames_per_video},
                {"appearance_height", s.appearance_height}, {"appearance_width", s.appearance_width},
                {"pose_height", s.pose_height}, {"pose_width", s.pose_width}, {"pose_noise", s.pose_noise},
                {"pose_dropout", s.pose_dropout}, {"person_count", s.person_count},
                {"train_per_class", s.train_per_class}, {"val_per_class", s.val_per_class},
                {"figure_scale", s.figure_scale}, {"punch_twist_radius", s.punch_twist_radius}};
  const auto& t = c.train;
  j["train"] = {{"batch_size", t.batch_size}, {"stream", schedule_to_json(t.stream)},
                {"integrator", schedule_to_json(t.integrator)}, {"momentum", t.momentum},
                {"weight_decay", t.weight_decay}, {"seed", t.seed}, {"eval_clips", t.eval_clips},
                {"selection_clips", t.selection_clips}};
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    check_keys(j, "<root>", {"codec", "sampling", "streams", "integrator", "model", "synth", "train"});
    if (j.contains("codec")) {
      const auto& s = j["codec"];
      check_keys(s, "codec", {"sigma", "max_persons", "min_person_score", "paf_line_width", "height", "width"});
      get(s, "sigma", c.codec.sigma);
      get(s, "max_persons", c.codec.max_persons);
      get(s, "min_person_score", c.codec.min_person_score);
      get(s, "paf_line_width", c.codec.paf_line_width);
      get(s, "height", c.codec.height);
      get(s, "width", c.codec.width);
      c.pose.height = c.codec.height;
      c.pose.width = c.codec.width;
    }
    if (j.contains("sampling")) {
      const auto& s = j["sampling"];
      check_keys(s, "sampling", {"frames", "interval", "augment", "scale_min", "scale_max", "translate_fraction",
                                 "flip_probability", "mean", "std"});
      get(s, "frames", c.sampling.clip.frames);
      get(s, "interval", c.sampling.clip.interval);
      get(s, "augment", c.sampling.augment_enabled);
      get(s, "scale_min", c.sampling.augment.scale_min);
      get(s, "scale_max", c.sampling.augment.scale_max);
      get(s, "translate_fraction", c.sampling.augment.translate_fraction);
      get(s, "flip_probability", c.sampling.augment.flip_probability);
      get(s, "mean", c.sampling.mean);
      get(s, "std", c.sampling.std);
    }
    if (j.contains("streams")) {
      const auto& s = j["streams"];
      check_keys(s, "streams", {"appearance", "pose"});
      if (s.contains("appearance")) stream_from_json(s["appearance"], "streams.appearance", c.appearance);
      if (s.contains("pose")) stream_from_json(s["pose"], "streams.pose", c.pose);
    }
    if (j.contains("integrator")) {
      const auto& s = j["integrator"];
      check_keys(s, "integrator", {"common_width", "gate_source", "lambda"});
      get(s, "common_width", c.model.common_width);
      if (s.contains("gate_source")) c.model.gate_source = gate_source_from_string(s["gate_source"].get<std::string>());
      get(s, "lambda", c.model.lambda);
    }
    if (j.contains("model")) {
      const auto& s = j["model"];
      check_keys(s, "model", {"variant", "num_classes", "pool_factor", "score_average_weight", "head_init_sigma"});
      if (s.contains("variant")) c.model.variant = model_variant_from_string(s["variant"].get<std::string>());
      get(s, "num_classes", c.model.num_classes);
      get(s, "pool_factor", c.model.pool_factor);
      get(s, "score_average_weight", c.model.score_average_weight);
      get(s, "head_init_sigma", c.model.head_init_sigma);
    }
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      check_keys(s, "synth", {"num_classes", "frames_per_video", "appearance_height", "appearance_width",
                              "pose_height", "pose_width", "pose_noise", "pose_dropout", "person_count",
                              "train_per_class", "val_per_class", "figure_scale", "punch_twist_radius"});
      auto& y = c.synth;
      get(s, "num_classes", y.num_classes);
      get(s, "frames_per_video", y.frames_per_video);
      get(s, "appearance_height", y.appearance_height);
      get(s, "appearance_width", y.appearance_width);
      get(s, "pose_height", y.pose_height);
      get(s, "pose_width", y.pose_width);
      get(s, "pose_noise", y.pose_noise);
      get(s, "pose_dropout", y.pose_dropout);
      get(s, "person_count", y.person_count);
      get(s, "train_per_class", y.train_per_class);
      get(s, "val_per_class", y.val_per_class);
      get(s, "figure_scale", y.figure_scale);
      get(s, "punch_twist_radius", y.punch_twist_radius);
    }
    if (j.contains("train")) {
      const auto& s = j["train"];
      check_keys(s, "train", {"batch_size", "stream", "integrator", "momentum", "weight_decay", "seed",
                              "eval_clips", "selection_clips"});
      auto& t = c.train;
      get(s, "batch_size", t.batch_size);
      if (s.contains("stream")) schedule_from_json(s["stream"], "train.stream", t.stream);
      if (s.contains("integrator")) schedule_from_json(s["integrator"], "train.integrator", t.integrator);
      get(s, "momentum", t.momentum);
      get(s, "weight_decay", t.weight_decay);
      get(s, "seed", t.seed);
      get(s, "eval_clips", t.eval_clips);
      get(s, "selection_clips", t.selection_clips);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.pose.input_channels = c.skeleton().num_channels();
  c.model.appearance = c.appearance;
  c.model.pose = c.pose;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace integral_action
