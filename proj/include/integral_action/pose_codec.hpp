#pragma once

// Keypoint detections -> stacked keypoint-heatmap + part-affinity-field tensor.
//
// Channel layout of an encoded clip (T x (K + 2B) x H x W):
//   [0, K)        one Gaussian heatmap per keypoint, in keypoint order
//   [K, K + 2B)   (x, y) component pairs of the affinity field, one pair per bone

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "integral_action/tensor.hpp"

namespace integral_action {

struct Keypoint {
  float x = 0.0f;
  float y = 0.0f;
  float score = 0.0f;
  bool visible = false;
};

struct PersonPose {
  std::vector<Keypoint> keypoints;
  float person_score = 0.0f;
};

struct PoseFrame {
  std::vector<PersonPose> persons;
  int frame_index = 0;
};

struct Skeleton {
  int num_keypoints = 0;
  std::vector<std::pair<int, int>> bones;       // (parent, child)
  std::vector<std::pair<int, int>> flip_pairs;  // (left, right)

  int num_bones() const { return static_cast<int>(bones.size()); }
  int num_channels() const { return num_keypoints + 2 * num_bones(); }

  // Throws std::invalid_argument on out-of-range or overlapping indices.
  void validate() const;

  // 13 joints / 12 bones stick figure used by the synthetic benchmark.
  static Skeleton stick_figure();
};

struct CodecConfig {
  float sigma = 0.5f;
  int max_persons = 5;
  float min_person_score = 0.1f;
  float paf_line_width = 1.0f;
  int height = 56;
  int width = 56;

  void validate() const;
};

struct PoseTensorClip {
  Tensor<float> data;  // T x (K + 2B) x H x W
  int num_keypoints = 0;
  int num_bones = 0;

  std::size_t frames() const { return data.dim(0); }
  std::size_t channels() const { return data.dim(1); }
  std::size_t height() const { return data.dim(2); }
  std::size_t width() const { return data.dim(3); }
};

// Persons with score >= min_person_score, highest score first, at most max_persons.
// Ties keep their input order.
std::vector<PersonPose> select_persons(const PoseFrame& frame, const CodecConfig& cfg);

// K x H x W. Sum of Gaussian blobs over persons, clamped to 1.
Tensor<float> render_keypoint_heatmaps(const std::vector<PersonPose>& persons, int num_keypoints,
                                       const CodecConfig& cfg);

// 2B x H x W. Unit bone direction on every pixel within paf_line_width / 2 of the
// segment; overlapping persons are averaged.
Tensor<float> render_pafs(const std::vector<PersonPose>& persons, const Skeleton& skeleton,
                          const CodecConfig& cfg);

PoseTensorClip encode_pose_clip(const std::vector<PoseFrame>& frames, const Skeleton& skeleton,
                                const CodecConfig& cfg);

// Mirror x about the frame width and swap left/right joints.
PoseFrame flip_pose_frame(const PoseFrame& frame, const Skeleton& skeleton, int width);

// --- file formats ---------------------------------------------------------

// Newline-delimited JSON, one frame per line:
//   {"frame": 0, "persons": [{"score": 0.9, "keypoints": [[x, y, s], null, ...]}]}
std::vector<PoseFrame> read_pose_frames(const std::filesystem::path& path, int num_keypoints);
void write_pose_frames(const std::filesystem::path& path, const std::vector<PoseFrame>& frames);
PoseFrame parse_pose_frame_line(const std::string& line, int num_keypoints);
std::string format_pose_frame_line(const PoseFrame& frame);

Skeleton read_skeleton(const std::filesystem::path& path);
void write_skeleton(const std::filesystem::path& path, const Skeleton& skeleton);

// "PTC1" container: magic, then T, K, B, H, W as little-endian u32, then
// row-major little-endian float32 payload.
void write_pose_clip(const std::filesystem::path& path, const PoseTensorClip& clip);
PoseTensorClip read_pose_clip(const std::filesystem::path& path);

}  // namespace integral_action
