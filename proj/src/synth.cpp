#include "integral_action/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "integral_action/binary_io.hpp"

namespace integral_action {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Triangle wave with period 2*pi and range [-1, 1].
double triangle(double phase) {
  const double u = phase / (2.0 * kPi);
  const double frac = u - std::floor(u);
  return frac < 0.5 ? 4.0 * frac - 1.0 : 3.0 - 4.0 * frac;
}

constexpr std::array<std::array<float, 3>, kNumMotionClasses> kTints = {{
    {0.90f, 0.20f, 0.20f},
    {0.20f, 0.75f, 0.25f},
    {0.20f, 0.35f, 0.90f},
    {0.90f, 0.80f, 0.15f},
    {0.75f, 0.25f, 0.85f},
    {0.15f, 0.80f, 0.85f},
    {0.95f, 0.55f, 0.15f},
    {0.45f, 0.45f, 0.45f},
}};

struct Limb {
  double angle;  // from straight down, outward positive
  double bend;   // extra rotation of the distal segment
};

// Body layout in pose pixels relative to the pelvis, before figure_scale.
constexpr double kNeckY = -4.0, kHeadY = -5.5, kShoulderX = 1.5, kHipX = 0.8;
constexpr double kUpperArm = 1.8, kForearm = 1.6, kThigh = 2.5, kShin = 2.5;

}  // namespace

const char* to_string(MotionClass m) {
  switch (m) {
    case MotionClass::kCircle: return "circle";
    case MotionClass::kZigzag: return "zigzag";
    case MotionClass::kRaiseLower: return "raise_lower";
    case MotionClass::kJump: return "jump";
    case MotionClass::kSquat: return "squat";
    case MotionClass::kAlternateWave: return "alternate_wave";
    case MotionClass::kPunch: return "punch";
    case MotionClass::kPunchTwist: return "punch_twist";
  }
  return "?";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValInContext: return "val_in_context";
    case Split::kValOutOfContext: return "val_out_of_context";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val_in_context" || s == "in") return Split::kValInContext;
  if (s == "val_out_of_context" || s == "out") return Split::kValOutOfContext;
  throw std::invalid_argument("unknown split: " + s);
}

void SynthConfig::validate() const {
  if (num_classes < 2 || num_classes > kNumMotionClasses) {
    throw std::invalid_argument("synth: num_classes must lie in [2, " + std::to_string(kNumMotionClasses) + "]");
  }
  if (frames_per_video < 1) throw std::invalid_argument("synth: frames_per_video must be >= 1");
  if (person_count < 1 || person_count > 3) throw std::invalid_argument("synth: person_count must lie in [1, 3]");
  if (pose_dropout < 0.0f || pose_dropout > 1.0f) throw std::invalid_argument("synth: pose_dropout outside [0, 1]");
  if (pose_noise < 0.0f) throw std::invalid_argument("synth: pose_noise must be >= 0");
  if (appearance_width % pose_width != 0 || appearance_height % pose_height != 0 ||
      appearance_width / pose_width != appearance_height / pose_height) {
    throw std::invalid_argument("synth: appearance size must be an integer multiple of the pose canvas");
  }
}

std::vector<int> context_reliant_classes(const SynthConfig& cfg) {
  if (cfg.num_classes < kNumMotionClasses) return {};
  return {static_cast<int>(MotionClass::kPunch), static_cast<int>(MotionClass::kPunchTwist)};
}

std::vector<int> motion_defined_classes(const SynthConfig& cfg) {
  std::vector<int> out{static_cast<int>(MotionClass::kCircle)};
  if (cfg.num_classes > static_cast<int>(MotionClass::kJump)) out.push_back(static_cast<int>(MotionClass::kJump));
  return out;
}

int deranged_context(int action, int num_classes) { return (action + 1) % num_classes; }

VideoParams sample_video_params(std::uint64_t seed, const SynthConfig& cfg) {
  Rng rng(splitmix64(seed ^ 0x5EEDull));
  std::uniform_real_distribution<double> jitter(-0.75, 0.75), amp(0.9, 1.1);
  VideoParams p;
  // Pelvis slightly below the canvas centre so the figure is vertically centred.
  p.center_x = static_cast<float>(0.5 * (cfg.pose_width - 1) + jitter(rng));
  p.center_y = static_cast<float>(0.5 * (cfg.pose_height - 1) + 0.5 * cfg.figure_scale + jitter(rng));
  p.amplitude = static_cast<float>(amp(rng));
  return p;
}

std::vector<Keypoint> motion_keypoints(MotionClass motion, int frame, int frames_per_video,
                                       const VideoParams& params, const SynthConfig& cfg) {
  const double theta = 2.0 * kPi * frame / frames_per_video;
  const double a = params.amplitude;
  const double s = cfg.figure_scale;
  double rx = params.center_x, ry = params.center_y;
  Limb arm_l{0.3, 0.2}, arm_r{0.3, 0.2}, leg_l{0.15, 0.0}, leg_r{0.15, 0.0};
  double twist = 0.0;

  switch (motion) {
    case MotionClass::kCircle:
      rx += 2.0 * a * std::cos(theta);
      ry += 2.0 * a * std::sin(theta);
      break;
    case MotionClass::kZigzag:
      rx += 2.5 * a * triangle(3.0 * theta);
      ry += 0.8 * a * triangle(12.0 * theta);
      arm_l = arm_r = {1.1, 0.9};
      break;
    case MotionClass::kRaiseLower: {
      const double lift = 2.5 * a * 0.5 * (1.0 - std::cos(2.0 * theta));
      arm_l = arm_r = {0.3 + lift, 0.0};
      break;
    }
    case MotionClass::kJump: {
      const double h = std::abs(std::sin(2.0 * theta));
      ry -= 1.5 * a * h;
      leg_l = leg_r = {0.15 + 0.6 * h, -1.0 * h};
      arm_l = arm_r = {0.3 + 2.0 * h, 0.0};
      break;
    }
    case MotionClass::kSquat: {
      const double d = 0.5 * (1.0 - std::cos(2.0 * theta));
      ry += 1.5 * a * d;
      leg_l = leg_r = {0.15 + 1.2 * d, -2.2 * d};
      arm_l = arm_r = {0.3 + 1.0 * d, 0.0};
      break;
    }
    case MotionClass::kAlternateWave: {
      const double w = 1.2 * a * std::sin(2.0 * theta);
      arm_l = {1.6 + w, 0.0};
      arm_r = {1.6 - w, 0.0};
      break;
    }
    case MotionClass::kPunchTwist:
      twist = cfg.punch_twist_radius;
      [[fallthrough]];
    case MotionClass::kPunch: {
      const double ext_l = std::max(0.0, std::sin(2.0 * theta));
      const double ext_r = std::max(0.0, -std::sin(2.0 * theta));
      arm_l = {1.4, 2.0 * (1.0 - ext_l)};
      arm_r = {1.4, 2.0 * (1.0 - ext_r)};
      break;
    }
  }

  std::vector<Keypoint> kp(13);
  auto put = [&](int i, double x, double y) {
    kp[i] = Keypoint{static_cast<float>(x), static_cast<float>(y), 1.0f, true};
  };
  const double neck_x = rx, neck_y = ry + s * kNeckY;
  put(0, rx, ry + s * kHeadY);
  put(1, neck_x, neck_y);
  put(8, rx, ry);
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? -1.0 : 1.0;
    const Limb arm = side == 0 ? arm_l : arm_r;
    const Limb leg = side == 0 ? leg_l : leg_r;
    const double shx = rx + sx * s * kShoulderX, shy = neck_y;
    const double elx = shx + sx * s * kUpperArm * std::sin(arm.angle);
    const double ely = shy + s * kUpperArm * std::cos(arm.angle);
    double wrx = elx + sx * s * kForearm * std::sin(arm.angle + arm.bend);
    double wry = ely + s * kForearm * std::cos(arm.angle + arm.bend);
    wrx += twist * std::cos(6.0 * theta);
    wry += twist * std::sin(6.0 * theta);
    const double hx = rx + sx * s * kHipX;
    const double knx = hx + sx * s * kThigh * std::sin(leg.angle);
    const double kny = ry + s * kThigh * std::cos(leg.angle);
    const double anx = knx + sx * s * kShin * std::sin(leg.angle + leg.bend);
    const double any = kny + s * kShin * std::cos(leg.angle + leg.bend);
    put(2 + side, shx, shy);
    put(4 + side, elx, ely);
    put(6 + side, wrx, wry);
    put(9 + side, knx, kny);
    put(11 + side, anx, any);
  }
  return kp;
}

// --- rendering -----------------------------------------------------------------

VideoRenderer::VideoRenderer(int action, int context, std::uint64_t seed, const SynthConfig& cfg)
    : cfg_(cfg), action_(action), context_(context) {
  cfg_.validate();
  if (action < 0 || action >= cfg_.num_classes || context < 0 || context >= cfg_.num_classes) {
    throw std::invalid_argument("generate_video: class index out of range");
  }
  const VideoParams base = sample_video_params(seed, cfg_);
  Rng rng(splitmix64(seed));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Extra persons stand to the side and move with a phase lag.
  std::vector<VideoParams> people{base};
  std::vector<int> lags{0};
  for (int p = 1; p < cfg_.person_count; ++p) {
    VideoParams q = base;
    q.center_x += static_cast<float>((p % 2 ? 1.0 : -1.0) * 0.3 * cfg_.pose_width);
    people.push_back(q);
    lags.push_back(p * cfg_.frames_per_video / 6);
  }
  std::vector<float> person_scores;
  for (int p = 0; p < cfg_.person_count; ++p) person_scores.push_back(static_cast<float>(0.5 + 0.5 * unit(rng)));

  const auto motion = static_cast<MotionClass>(action_);
  for (int t = 0; t < cfg_.frames_per_video; ++t) {
    PoseFrame clean{{}, t};
    for (int p = 0; p < cfg_.person_count; ++p) {
      clean.persons.push_back(PersonPose{
          motion_keypoints(motion, t + lags[p], cfg_.frames_per_video, people[p], cfg_), person_scores[p]});
    }
    PoseFrame noisy = clean;
    const bool dropped = unit(rng) < cfg_.pose_dropout;
    for (auto& person : noisy.persons) {
      for (auto& k : person.keypoints) {
        k.x += static_cast<float>(cfg_.pose_noise * noise(rng));
        k.y += static_cast<float>(cfg_.pose_noise * noise(rng));
      }
    }
    if (dropped) noisy.persons.clear();
    clean_.push_back(std::move(clean));
    pose_.push_back(std::move(noisy));
  }
}

void VideoRenderer::render_frame(int frame, float* dst) const {
  const int h = cfg_.appearance_height, w = cfg_.appearance_width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto& tint = kTints[static_cast<std::size_t>(context_)];
  const int c = context_;

  // Context: tinted background with an oriented stripe texture.
  const double angle = c * kPi / kNumMotionClasses;
  const double freq = 3.0 + (c % 3);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double stripe = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * (x * ca + y * sa) / w);
      const double shade = 0.45 + 0.3 * stripe;
      for (int ch = 0; ch < 3; ++ch) dst[ch * plane + y * w + x] = static_cast<float>(tint[ch] * shade);
    }
  }
  // Context object: checkerboard patch in the complementary colour at a class-keyed corner.
  const int patch = w / 4;
  const int px0 = (c % 2) ? w - patch - 2 : 2;
  const int py0 = ((c / 2) % 2) ? h - patch - 2 : 2;
  const int cell = 2 + (c / 4);
  for (int y = py0; y < py0 + patch; ++y) {
    for (int x = px0; x < px0 + patch; ++x) {
      const bool on = (((x - px0) / cell) + ((y - py0) / cell)) % 2 == 0;
      for (int ch = 0; ch < 3; ++ch) {
        dst[ch * plane + y * w + x] = on ? 1.0f - tint[ch] : 0.1f;
      }
    }
  }

  // Figure: grey bones and bright joint discs, at pose coordinates times the scale ratio.
  const double r = cfg_.scale_ratio();
  const auto skeleton = Skeleton::stick_figure();
  for (const auto& person : clean_[static_cast<std::size_t>(frame)].persons) {
    for (const auto& [a, b] : skeleton.bones) {
      const double ax = person.keypoints[a].x * r, ay = person.keypoints[a].y * r;
      const double bx = person.keypoints[b].x * r, by = person.keypoints[b].y * r;
      const double dx = bx - ax, dy = by - ay, len2 = dx * dx + dy * dy;
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - 1)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ax, bx) + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - 1)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(ay, by) + 1)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double t = len2 > 0 ? std::clamp(((x - ax) * dx + (y - ay) * dy) / len2, 0.0, 1.0) : 0.0;
          const double ex = x - ax - t * dx, ey = y - ay - t * dy;
          if (ex * ex + ey * ey <= 0.75 * 0.75) {
            for (int ch = 0; ch < 3; ++ch) dst[ch * plane + y * w + x] = 0.8f;
          }
        }
      }
    }
    for (const auto& k : person.keypoints) {
      const double kx = k.x * r, ky = k.y * r;
      for (int y = std::max(0, static_cast<int>(ky) - 3); y <= std::min(h - 1, static_cast<int>(ky) + 3); ++y) {
        for (int x = std::max(0, static_cast<int>(kx) - 3); x <= std::min(w - 1, static_cast<int>(kx) + 3); ++x) {
          if ((x - kx) * (x - kx) + (y - ky) * (y - ky) <= 1.5 * 1.5) {
            for (int ch = 0; ch < 3; ++ch) dst[ch * plane + y * w + x] = 1.0f;
          }
        }
      }
    }
  }
}

AppearanceClip VideoRenderer::render_clip(const std::vector<int>& frames) const {
  const std::size_t h = static_cast<std::size_t>(cfg_.appearance_height);
  const std::size_t w = static_cast<std::size_t>(cfg_.appearance_width);
  AppearanceClip clip{Tensor<float>({frames.size(), 3, h, w})};
  for (std::size_t i = 0; i < frames.size(); ++i) render_frame(frames[i], clip.data.data() + i * 3 * h * w);
  return clip;
}

std::vector<PoseFrame> VideoRenderer::pose_clip(const std::vector<int>& frames) const {
  std::vector<PoseFrame> out;
  out.reserve(frames.size());
  for (int f : frames) out.push_back(pose_.at(static_cast<std::size_t>(f)));
  return out;
}

SyntheticVideo generate_video(int action, int context, std::uint64_t seed, const SynthConfig& cfg) {
  VideoRenderer renderer(action, context, seed, cfg);
  std::vector<int> all(static_cast<std::size_t>(cfg.frames_per_video));
  for (int t = 0; t < cfg.frames_per_video; ++t) all[t] = t;
  SyntheticVideo v;
  v.appearance_frames = renderer.render_clip(all).data;
  v.pose_frames = renderer.pose_frames();
  v.clean_pose_frames = renderer.clean_pose_frames();
  v.action_label = action;
  v.context_label = context;
  return v;
}

// --- manifests -------------------------------------------------------------------

std::vector<VideoDescriptor> make_dataset(Split split, const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int per_class = split == Split::kTrain ? cfg.train_per_class : cfg.val_per_class;
  const std::uint64_t stream = splitmix64(splitmix64(seed) + static_cast<std::uint64_t>(split) + 1);
  std::vector<VideoDescriptor> out;
  out.reserve(static_cast<std::size_t>(per_class) * cfg.num_classes);
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < cfg.num_classes; ++c) {
      VideoDescriptor d;
      const std::size_t index = out.size();
      d.video_id = std::string(to_string(split)) + "_" + std::to_string(index);
      d.action = c;
      d.context = split == Split::kValOutOfContext ? deranged_context(c, cfg.num_classes) : c;
      d.seed = splitmix64(stream ^ (0xA24BAED4963EE407ull * (index + 1)));
      d.split = split;
      out.push_back(std::move(d));
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<VideoDescriptor>& videos) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& v : videos) {
    out << json{{"video_id", v.video_id}, {"action", v.action}, {"context", v.context},
                {"seed", v.seed}, {"split", to_string(v.split)}}
               .dump()
        << '\n';
  }
}

std::vector<VideoDescriptor> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<VideoDescriptor> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    VideoDescriptor d;
    d.video_id = j.at("video_id").get<std::string>();
    d.action = j.at("action").get<int>();
    d.context = j.at("context").get<int>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.split = split_from_string(j.at("split").get<std::string>());
    out.push_back(std::move(d));
  }
  return out;
}

void write_appearance_clip(const std::filesystem::path& path, const Tensor<float>& frames) {
  if (frames.rank() != 4) throw std::invalid_argument("write_appearance_clip: expected T x C x H x W");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write appearance clip " + path.string());
  binary::write_magic(out, "AVC1");
  for (std::size_t i = 0; i < 4; ++i) binary::write_u32(out, static_cast<std::uint32_t>(frames.dim(i)));
  binary::write_f32_array(out, frames.data(), frames.size());
}

Tensor<float> read_appearance_clip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open appearance clip " + path.string());
  binary::expect_magic(in, "AVC1");
  Shape shape(4);
  for (auto& d : shape) d = binary::read_u32(in);
  Tensor<float> t(shape);
  binary::read_f32_array(in, t.data(), t.size());
  return t;
}

}  // namespace integral_action
