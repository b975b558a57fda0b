#pragma once

// Procedural in-context / out-of-context action benchmark.
//
// The action label is always defined by the stick figure's motion. The appearance frames
// additionally carry a context cue (background tint, stripe texture and an object patch)
// keyed to a class index: in the matched splits the cue agrees with the action, in the
// out-of-context split it is taken from a deranged class.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "integral_action/pose_codec.hpp"
#include "integral_action/sampling.hpp"
#include "integral_action/tensor.hpp"

namespace integral_action {

enum class MotionClass {
  kCircle = 0,
  kZigzag,
  kRaiseLower,
  kJump,
  kSquat,
  kAlternateWave,
  kPunch,
  kPunchTwist,  // kPunch plus a small wrist loop: near-duplicate of kPunch
};
inline constexpr int kNumMotionClasses = 8;

const char* to_string(MotionClass m);

enum class ContextMode { kMatched, kDerangement };

enum class Split { kTrain, kValInContext, kValOutOfContext };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct SynthConfig {
  int num_classes = 8;
  int frames_per_video = 48;
  int appearance_height = 64;
  int appearance_width = 64;
  int pose_height = 16;
  int pose_width = 16;
  float pose_noise = 0.5f;     // jitter sigma, pose pixels
  float pose_dropout = 0.1f;   // probability a frame has no detections
  int person_count = 1;
  int train_per_class = 40;
  int val_per_class = 10;
  float figure_scale = 0.8f;
  float punch_twist_radius = 0.3f;  // pose pixels; the only cue separating the near-duplicates

  float scale_ratio() const { return static_cast<float>(appearance_width) / static_cast<float>(pose_width); }
  void validate() const;
};

// Classes whose motion is (near-)ambiguous and therefore rely on context.
std::vector<int> context_reliant_classes(const SynthConfig& cfg);
// Classes with large, unmistakable whole-body motion.
std::vector<int> motion_defined_classes(const SynthConfig& cfg);

// context = (action + 1) mod N; has no fixed point for N >= 2.
int deranged_context(int action, int num_classes);

struct VideoParams {
  float center_x = 0.0f;  // pelvis rest position, pose pixels
  float center_y = 0.0f;
  float amplitude = 1.0f;
};

struct VideoDescriptor {
  std::string video_id;
  int action = 0;
  int context = 0;
  std::uint64_t seed = 0;
  Split split = Split::kTrain;
};

struct SyntheticVideo {
  Tensor<float> appearance_frames;  // F x 3 x H_A x W_A, RGB in [0, 1]
  std::vector<PoseFrame> pose_frames;
  std::vector<PoseFrame> clean_pose_frames;  // before jitter / dropout
  int action_label = 0;
  int context_label = 0;
};

VideoParams sample_video_params(std::uint64_t seed, const SynthConfig& cfg);

// Noise-free joints of one person at frame t, pose-canvas pixels.
std::vector<Keypoint> motion_keypoints(MotionClass motion, int frame, int frames_per_video,
                                       const VideoParams& params, const SynthConfig& cfg);

// Renders frames on demand; poses for the whole video are computed up front.
class VideoRenderer {
 public:
  VideoRenderer(int action, int context, std::uint64_t seed, const SynthConfig& cfg);

  int frames() const { return cfg_.frames_per_video; }
  const std::vector<PoseFrame>& pose_frames() const { return pose_; }
  const std::vector<PoseFrame>& clean_pose_frames() const { return clean_; }
  // 3 x H_A x W_A RGB frame written at dst.
  void render_frame(int frame, float* dst) const;
  // T x 3 x H_A x W_A.
  AppearanceClip render_clip(const std::vector<int>& frames) const;
  std::vector<PoseFrame> pose_clip(const std::vector<int>& frames) const;

 private:
  SynthConfig cfg_;
  int action_, context_;
  std::vector<PoseFrame> clean_, pose_;
};

SyntheticVideo generate_video(int action, int context, std::uint64_t seed, const SynthConfig& cfg);

std::vector<VideoDescriptor> make_dataset(Split split, const SynthConfig& cfg, std::uint64_t seed);

void write_manifest(const std::filesystem::path& path, const std::vector<VideoDescriptor>& videos);
std::vector<VideoDescriptor> read_manifest(const std::filesystem::path& path);

// "AVC1" container: magic, then T, C, H, W as little-endian u32, then float32 payload.
void write_appearance_clip(const std::filesystem::path& path, const Tensor<float>& frames);
Tensor<float> read_appearance_clip(const std::filesystem::path& path);

}  // namespace integral_action
