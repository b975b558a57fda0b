#include "integral_action/sampling.hpp"

#include <cmath>
#include <stdexcept>

namespace integral_action {

namespace {

float uniform(Rng& rng, float lo, float hi) {
  // Draw even for degenerate ranges so the stream position does not depend on the config.
  const double u = std::generate_canonical<double, 53>(rng);
  return lo == hi ? lo : static_cast<float>(lo + (hi - lo) * u);
}

}  // namespace

std::vector<int> sample_clip_indices(int video_len, const ClipSpec& spec, Rng& rng,
                                     std::optional<int> start) {
  if (video_len < 1) throw std::invalid_argument("sample_clip_indices: video_len must be >= 1");
  if (spec.frames < 1 || spec.interval < 1) {
    throw std::invalid_argument("sample_clip_indices: frames and interval must be >= 1");
  }
  int s = 0;
  if (start) {
    s = *start;
  } else if (spec.mode == ClipMode::kTrainRandomStart) {
    s = std::uniform_int_distribution<int>(0, video_len - 1)(rng);
  } else {
    throw std::invalid_argument("sample_clip_indices: evaluation mode needs an explicit start");
  }
  std::vector<int> idx(spec.frames);
  for (int i = 0; i < spec.frames; ++i) {
    const long long v = static_cast<long long>(s) + static_cast<long long>(i) * spec.interval;
    idx[i] = static_cast<int>(((v % video_len) + video_len) % video_len);
  }
  return idx;
}

std::vector<int> eval_clip_starts(int video_len, int count) {
  std::vector<int> starts(count);
  for (int i = 0; i < count; ++i) {
    starts[i] = static_cast<int>(static_cast<long long>(i) * video_len / count);
  }
  return starts;
}

AugmentSpec make_augment_spec(Rng& rng, const AugmentConfig& cfg, int width, int height) {
  AugmentSpec spec;
  spec.scale = uniform(rng, cfg.scale_min, cfg.scale_max);
  const float tx = cfg.translate_fraction * static_cast<float>(width);
  const float ty = cfg.translate_fraction * static_cast<float>(height);
  spec.translate_x = uniform(rng, -tx, tx);
  spec.translate_y = uniform(rng, -ty, ty);
  spec.hflip = std::generate_canonical<double, 53>(rng) < cfg.flip_probability;
  if (!(spec.scale > 0.0f)) throw std::invalid_argument("make_augment_spec: scale must be > 0");
  return spec;
}

AppearanceClip apply_augment_appearance(const AppearanceClip& clip, const AugmentSpec& spec) {
  if (!(spec.scale > 0.0f)) throw std::invalid_argument("augment: scale must be > 0");
  const std::size_t t_len = clip.frames(), ch = clip.data.dim(1);
  const int h = static_cast<int>(clip.height()), w = static_cast<int>(clip.width());
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  AppearanceClip out{Tensor<float>(clip.data.shape())};
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Invert: flip, then translate, then scale about the centre.
      const double xf = spec.hflip ? (w - 1 - x) : x;
      const double sx = cx + (xf - spec.translate_x - cx) / spec.scale;
      const double sy = cy + (y - spec.translate_y - cy) / spec.scale;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double ax = sx - fx, ay = sy - fy;
      const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (std::size_t f = 0; f < t_len * ch; ++f) {
        const float* src = clip.data.data() + f * plane;
        double v = 0.0;
        for (int q = 0; q < 4; ++q) {
          if (wts[q] == 0.0 || xs[q] < 0 || xs[q] >= w || ys[q] < 0 || ys[q] >= h) continue;
          v += wts[q] * src[static_cast<std::size_t>(ys[q]) * w + xs[q]];
        }
        out.data[f * plane + static_cast<std::size_t>(y) * w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::vector<PoseFrame> apply_augment_pose(const std::vector<PoseFrame>& frames, const AugmentSpec& spec,
                                          const Skeleton& skeleton, int width, int height) {
  const float cx = 0.5f * static_cast<float>(width - 1), cy = 0.5f * static_cast<float>(height - 1);
  std::vector<PoseFrame> out;
  out.reserve(frames.size());
  for (const auto& frame : frames) {
    PoseFrame f = frame;
    if (spec.scale != 1.0f || spec.translate_x != 0.0f || spec.translate_y != 0.0f) {
      for (auto& person : f.persons) {
        for (auto& kp : person.keypoints) {
          kp.x = cx + spec.scale * (kp.x - cx) + spec.translate_x;
          kp.y = cy + spec.scale * (kp.y - cy) + spec.translate_y;
        }
      }
    }
    out.push_back(spec.hflip ? flip_pose_frame(f, skeleton, width) : std::move(f));
  }
  return out;
}

}  // namespace integral_action
