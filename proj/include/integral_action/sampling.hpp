#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "integral_action/pose_codec.hpp"
#include "integral_action/tensor.hpp"

namespace integral_action {

using Rng = std::mt19937_64;

enum class ClipMode { kTrainRandomStart, kEvalUniformStarts };

struct ClipSpec {
  int frames = 8;    // T
  int interval = 8;  // tau
  ClipMode mode = ClipMode::kTrainRandomStart;
};

struct AugmentConfig {
  float scale_min = 0.8f;
  float scale_max = 1.25f;
  float translate_fraction = 0.1f;  // of the frame size, each axis
  float flip_probability = 0.5f;
};

struct AugmentSpec {
  float scale = 1.0f;
  float translate_x = 0.0f;  // pixels, in the frame the spec is applied to
  float translate_y = 0.0f;
  bool hflip = false;

  bool is_identity() const { return scale == 1.0f && translate_x == 0.0f && translate_y == 0.0f && !hflip; }
  // Same geometric transform expressed in a frame `ratio` times smaller.
  AugmentSpec rescaled(float ratio) const {
    return {scale, translate_x / ratio, translate_y / ratio, hflip};
  }
};

// T x 3 x H x W, RGB.
struct AppearanceClip {
  Tensor<float> data;
  std::size_t frames() const { return data.dim(0); }
  std::size_t height() const { return data.dim(2); }
  std::size_t width() const { return data.dim(3); }
};

// start + i * interval (mod video_len). Without an explicit start, training mode draws
// one uniformly from [0, video_len); evaluation mode requires the caller's start.
std::vector<int> sample_clip_indices(int video_len, const ClipSpec& spec, Rng& rng,
                                     std::optional<int> start = std::nullopt);

// floor(i * video_len / count) for i in [0, count).
std::vector<int> eval_clip_starts(int video_len, int count);

AugmentSpec make_augment_spec(Rng& rng, const AugmentConfig& cfg, int width, int height);

// Scale about the frame centre, translate, then mirror; bilinear, zero outside.
AppearanceClip apply_augment_appearance(const AppearanceClip& clip, const AugmentSpec& spec);

// Same transform on keypoints of a W x H pose canvas; mirroring goes through flip_pose_frame.
std::vector<PoseFrame> apply_augment_pose(const std::vector<PoseFrame>& frames, const AugmentSpec& spec,
                                          const Skeleton& skeleton, int width, int height);

}  // namespace integral_action
