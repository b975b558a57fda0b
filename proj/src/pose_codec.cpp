#include "integral_action/pose_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "integral_action/binary_io.hpp"

namespace integral_action {

using nlohmann::json;

void Skeleton::validate() const {
  if (num_keypoints < 1) throw std::invalid_argument("skeleton: num_keypoints must be >= 1");
  auto in_range = [&](int i) { return i >= 0 && i < num_keypoints; };
  for (const auto& [p, c] : bones) {
    if (!in_range(p) || !in_range(c)) throw std::invalid_argument("skeleton: bone index out of range");
    if (p == c) throw std::invalid_argument("skeleton: bone connects a joint to itself");
  }
  std::set<int> seen;
  for (const auto& [l, r] : flip_pairs) {
    if (!in_range(l) || !in_range(r)) throw std::invalid_argument("skeleton: flip pair out of range");
    if (l == r || !seen.insert(l).second || !seen.insert(r).second) {
      throw std::invalid_argument("skeleton: flip pairs must be disjoint");
    }
  }
}

Skeleton Skeleton::stick_figure() {
  // 0 head, 1 neck, 2/3 shoulders, 4/5 elbows, 6/7 wrists, 8 pelvis, 9/10 knees, 11/12 ankles
  Skeleton s;
  s.num_keypoints = 13;
  s.bones = {{0, 1}, {1, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 6},
             {5, 7}, {1, 8}, {8, 9}, {8, 10}, {9, 11}, {10, 12}};
  s.flip_pairs = {{2, 3}, {4, 5}, {6, 7}, {9, 10}, {11, 12}};
  return s;
}

void CodecConfig::validate() const {
  if (!(sigma > 0.0f)) throw std::invalid_argument("codec: sigma must be > 0");
  if (max_persons < 1) throw std::invalid_argument("codec: max_persons must be >= 1");
  if (!(paf_line_width >= 1.0f)) throw std::invalid_argument("codec: paf_line_width must be >= 1");
  if (height < 1 || width < 1) throw std::invalid_argument("codec: heatmap size must be positive");
}

std::vector<PersonPose> select_persons(const PoseFrame& frame, const CodecConfig& cfg) {
  std::vector<PersonPose> kept;
  for (const auto& p : frame.persons) {
    if (p.person_score >= cfg.min_person_score) kept.push_back(p);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const PersonPose& a, const PersonPose& b) {
    return a.person_score > b.person_score;
  });
  if (kept.size() > static_cast<std::size_t>(cfg.max_persons)) kept.resize(cfg.max_persons);
  return kept;
}

Tensor<float> render_keypoint_heatmaps(const std::vector<PersonPose>& persons, int num_keypoints,
                                       const CodecConfig& cfg) {
  const int h = cfg.height, w = cfg.width;
  const double denom = 2.0 * static_cast<double>(cfg.sigma) * static_cast<double>(cfg.sigma);
  std::vector<double> acc(static_cast<std::size_t>(num_keypoints) * h * w, 0.0);
  for (const auto& person : persons) {
    if (static_cast<int>(person.keypoints.size()) != num_keypoints) {
      throw std::invalid_argument("render_keypoint_heatmaps: keypoint count mismatch");
    }
    for (int k = 0; k < num_keypoints; ++k) {
      const Keypoint& kp = person.keypoints[k];
      if (!kp.visible) continue;
      double* plane = acc.data() + static_cast<std::size_t>(k) * h * w;
      for (int y = 0; y < h; ++y) {
        const double dy = y - static_cast<double>(kp.y);
        for (int x = 0; x < w; ++x) {
          const double dx = x - static_cast<double>(kp.x);
          plane[y * w + x] += std::exp(-(dx * dx + dy * dy) / denom);
        }
      }
    }
  }
  Tensor<float> out({static_cast<std::size_t>(num_keypoints), static_cast<std::size_t>(h),
                     static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(std::min(acc[i], 1.0));
  return out;
}

Tensor<float> render_pafs(const std::vector<PersonPose>& persons, const Skeleton& skeleton,
                          const CodecConfig& cfg) {
  const int h = cfg.height, w = cfg.width;
  const int nb = skeleton.num_bones();
  const double radius = 0.5 * static_cast<double>(cfg.paf_line_width);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  Tensor<float> out({static_cast<std::size_t>(2 * nb), static_cast<std::size_t>(h),
                     static_cast<std::size_t>(w)});
  std::vector<double> sx(plane), sy(plane);
  std::vector<int> count(plane);
  for (int b = 0; b < nb; ++b) {
    std::fill(sx.begin(), sx.end(), 0.0);
    std::fill(sy.begin(), sy.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    const auto [parent, child] = skeleton.bones[b];
    for (const auto& person : persons) {
      const Keypoint& a = person.keypoints.at(parent);
      const Keypoint& c = person.keypoints.at(child);
      if (!a.visible || !c.visible) continue;
      const double ax = a.x, ay = a.y;
      const double dx = static_cast<double>(c.x) - ax, dy = static_cast<double>(c.y) - ay;
      const double len2 = dx * dx + dy * dy;
      if (len2 == 0.0) continue;  // degenerate bone: no direction
      const double len = std::sqrt(len2);
      const double ux = dx / len, uy = dy / len;

      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, ax + dx) - radius)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(ax, ax + dx) + radius)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, ay + dy) - radius)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(ay, ay + dy) + radius)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double px = x - ax, py = y - ay;
          const double t = std::clamp((px * dx + py * dy) / len2, 0.0, 1.0);
          const double ex = px - t * dx, ey = py - t * dy;
          if (std::sqrt(ex * ex + ey * ey) <= radius) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            sx[i] += ux;
            sy[i] += uy;
            ++count[i];
          }
        }
      }
    }
    float* ox = out.data() + static_cast<std::size_t>(2 * b) * plane;
    float* oy = ox + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (count[i] == 0) continue;
      ox[i] = static_cast<float>(sx[i] / count[i]);
      oy[i] = static_cast<float>(sy[i] / count[i]);
    }
  }
  return out;
}

PoseTensorClip encode_pose_clip(const std::vector<PoseFrame>& frames, const Skeleton& skeleton,
                                const CodecConfig& cfg) {
  if (frames.empty()) throw std::invalid_argument("encode_pose_clip: empty clip");
  const int k = skeleton.num_keypoints;
  const int nb = skeleton.num_bones();
  const std::size_t ch = static_cast<std::size_t>(k + 2 * nb);
  const std::size_t plane = static_cast<std::size_t>(cfg.height) * cfg.width;

  PoseTensorClip clip;
  clip.num_keypoints = k;
  clip.num_bones = nb;
  clip.data = Tensor<float>({frames.size(), ch, static_cast<std::size_t>(cfg.height),
                             static_cast<std::size_t>(cfg.width)});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto persons = select_persons(frames[t], cfg);
    const auto heat = render_keypoint_heatmaps(persons, k, cfg);
    const auto paf = render_pafs(persons, skeleton, cfg);
    float* dst = clip.data.data() + t * ch * plane;
    std::copy(heat.values().begin(), heat.values().end(), dst);
    std::copy(paf.values().begin(), paf.values().end(), dst + static_cast<std::size_t>(k) * plane);
  }
  return clip;
}

PoseFrame flip_pose_frame(const PoseFrame& frame, const Skeleton& skeleton, int width) {
  PoseFrame out = frame;
  const float edge = static_cast<float>(width - 1);
  for (auto& person : out.persons) {
    for (auto& kp : person.keypoints) kp.x = edge - kp.x;
    for (const auto& [l, r] : skeleton.flip_pairs) {
      std::swap(person.keypoints.at(l), person.keypoints.at(r));
    }
  }
  return out;
}

// --- file formats ---------------------------------------------------------

PoseFrame parse_pose_frame_line(const std::string& line, int num_keypoints) {
  const json j = json::parse(line);
  PoseFrame frame;
  frame.frame_index = j.at("frame").get<int>();
  if (frame.frame_index < 0) throw std::invalid_argument("pose file: negative frame index");
  for (const auto& jp : j.at("persons")) {
    PersonPose person;
    person.person_score = jp.at("score").get<float>();
    const auto& kps = jp.at("keypoints");
    if (static_cast<int>(kps.size()) != num_keypoints) {
      throw std::invalid_argument("pose file: frame " + std::to_string(frame.frame_index) +
                                  " has " + std::to_string(kps.size()) + " keypoints, expected " +
                                  std::to_string(num_keypoints));
    }
    for (const auto& jk : kps) {
      Keypoint kp;
      if (!jk.is_null()) {
        kp.x = jk.at(0).get<float>();
        kp.y = jk.at(1).get<float>();
        kp.score = jk.size() > 2 ? jk.at(2).get<float>() : 1.0f;
        kp.visible = true;
      }
      person.keypoints.push_back(kp);
    }
    frame.persons.push_back(std::move(person));
  }
  return frame;
}

std::string format_pose_frame_line(const PoseFrame& frame) {
  json persons = json::array();
  for (const auto& p : frame.persons) {
    json kps = json::array();
    for (const auto& kp : p.keypoints) {
      if (kp.visible) {
        kps.push_back({kp.x, kp.y, kp.score});
      } else {
        kps.push_back(nullptr);
      }
    }
    persons.push_back({{"score", p.person_score}, {"keypoints", std::move(kps)}});
  }
  return json{{"frame", frame.frame_index}, {"persons", std::move(persons)}}.dump();
}

std::vector<PoseFrame> read_pose_frames(const std::filesystem::path& path, int num_keypoints) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pose file " + path.string());
  std::vector<PoseFrame> frames;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    frames.push_back(parse_pose_frame_line(line, num_keypoints));
  }
  return frames;
}

void write_pose_frames(const std::filesystem::path& path, const std::vector<PoseFrame>& frames) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write pose file " + path.string());
  for (const auto& f : frames) out << format_pose_frame_line(f) << '\n';
}

Skeleton read_skeleton(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open skeleton file " + path.string());
  const json j = json::parse(in);
  Skeleton s;
  s.num_keypoints = j.at("num_keypoints").get<int>();
  for (const auto& b : j.at("bones")) s.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
  if (j.contains("flip_pairs")) {
    for (const auto& p : j.at("flip_pairs")) {
      s.flip_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    }
  }
  s.validate();
  return s;
}

void write_skeleton(const std::filesystem::path& path, const Skeleton& skeleton) {
  json bones = json::array(), pairs = json::array();
  for (const auto& [a, b] : skeleton.bones) bones.push_back({a, b});
  for (const auto& [a, b] : skeleton.flip_pairs) pairs.push_back({a, b});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write skeleton file " + path.string());
  out << json{{"num_keypoints", skeleton.num_keypoints}, {"bones", bones}, {"flip_pairs", pairs}}
             .dump(2)
      << '\n';
}

void write_pose_clip(const std::filesystem::path& path, const PoseTensorClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write pose clip " + path.string());
  binary::write_magic(out, "PTC1");
  binary::write_u32(out, static_cast<std::uint32_t>(clip.frames()));
  binary::write_u32(out, static_cast<std::uint32_t>(clip.num_keypoints));
  binary::write_u32(out, static_cast<std::uint32_t>(clip.num_bones));
  binary::write_u32(out, static_cast<std::uint32_t>(clip.height()));
  binary::write_u32(out, static_cast<std::uint32_t>(clip.width()));
  binary::write_f32_array(out, clip.data.data(), clip.data.size());
}

PoseTensorClip read_pose_clip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open pose clip " + path.string());
  binary::expect_magic(in, "PTC1");
  const auto t = binary::read_u32(in);
  const auto k = binary::read_u32(in);
  const auto b = binary::read_u32(in);
  const auto h = binary::read_u32(in);
  const auto w = binary::read_u32(in);
  PoseTensorClip clip;
  clip.num_keypoints = static_cast<int>(k);
  clip.num_bones = static_cast<int>(b);
  clip.data = Tensor<float>({t, std::size_t{k} + 2 * std::size_t{b}, h, w});
  binary::read_f32_array(in, clip.data.data(), clip.data.size());
  return clip;
}

}  // namespace integral_action
