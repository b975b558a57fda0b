#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "integral_action/sampling.hpp"
#include "integral_action/synth.hpp"
#include "oracles.hpp"

using namespace integral_action;

TEST_CASE("clip indices wrap modulo the video length") {
  Rng rng(1);
  ClipSpec spec{8, 4};
  const auto idx = sample_clip_indices(48, spec, rng, 40);
  const std::vector<int> want{40, 44, 0, 4, 8, 12, 16, 20};
  CHECK(idx == want);
  for (int trial = 0; trial < 100; ++trial) {
    const auto r = sample_clip_indices(48, spec, rng);
    REQUIRE(r.size() == 8);
    CHECK((r[0] >= 0 && r[0] < 48));
    for (std::size_t i = 1; i < r.size(); ++i) CHECK(r[i] == (r[0] + 4 * static_cast<int>(i)) % 48);
  }
  ClipSpec eval_spec{8, 4, ClipMode::kEvalUniformStarts};
  CHECK_THROWS(sample_clip_indices(48, eval_spec, rng));
}

TEST_CASE("uniform evaluation starts") {
  CHECK(eval_clip_starts(48, 10) == std::vector<int>{0, 4, 9, 14, 19, 24, 28, 33, 38, 43});
  CHECK(eval_clip_starts(48, 1) == std::vector<int>{0});
}

TEST_CASE("augment specs stay in range") {
  Rng rng(2);
  AugmentConfig cfg;
  int flips = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto s = make_augment_spec(rng, cfg, 64, 64);
    CHECK((s.scale >= 0.8f && s.scale <= 1.25f));
    CHECK(std::abs(s.translate_x) <= 6.4f + 1e-5f);
    CHECK(std::abs(s.translate_y) <= 6.4f + 1e-5f);
    flips += s.hflip;
  }
  CHECK((flips > 850 && flips < 1150));
  const auto r = AugmentSpec{1.1f, 8.0f, -4.0f, true}.rescaled(4.0f);
  CHECK(r.translate_x == 2.0f);
  CHECK(r.translate_y == -1.0f);
  CHECK(r.scale == 1.1f);
}

TEST_CASE("identity augmentation leaves clips unchanged") {
  std::mt19937_64 rng(3);
  AppearanceClip clip{oracle::random_tensor(rng, {2, 3, 8, 8}).cast<float>()};
  CHECK(apply_augment_appearance(clip, AugmentSpec{}).data == clip.data);
  AppearanceClip flipped = apply_augment_appearance(clip, AugmentSpec{1.0f, 0.0f, 0.0f, true});
  CHECK(flipped.data.at(1, 2, 3, 0) == clip.data.at(1, 2, 3, 7));
  CHECK(apply_augment_appearance(flipped, AugmentSpec{1.0f, 0.0f, 0.0f, true}).data == clip.data);
}

TEST_CASE("pose augmentation moves keypoints with the image") {
  const Skeleton sk = Skeleton::stick_figure();
  PoseFrame f;
  PersonPose p;
  p.person_score = 1.0f;
  for (int k = 0; k < 13; ++k) p.keypoints.push_back({7.5f, 7.5f, 1.0f, true});
  p.keypoints[8] = {10.0f, 5.0f, 1.0f, true};
  f.persons.push_back(p);
  const auto moved = apply_augment_pose({f}, AugmentSpec{1.0f, 2.0f, -1.0f, false}, sk, 16, 16);
  CHECK(moved[0].persons[0].keypoints[8].x == doctest::Approx(12.0f));
  CHECK(moved[0].persons[0].keypoints[8].y == doctest::Approx(4.0f));
  const auto scaled = apply_augment_pose({f}, AugmentSpec{2.0f, 0.0f, 0.0f, false}, sk, 16, 16);
  // Scaling about the centre (7.5, 7.5).
  CHECK(scaled[0].persons[0].keypoints[8].x == doctest::Approx(12.5f));
  CHECK(scaled[0].persons[0].keypoints[0].x == doctest::Approx(7.5f));
}

TEST_CASE("circle trajectory is closed-form") {
  SynthConfig cfg;
  const VideoParams params{7.0f, 8.0f, 1.0f};
  for (int t = 0; t < 48; t += 5) {
    const auto kp = motion_keypoints(MotionClass::kCircle, t, 48, params, cfg);
    const double theta = 2.0 * std::numbers::pi * t / 48.0;
    CHECK(kp[8].x == doctest::Approx(7.0 + 2.0 * std::cos(theta)).epsilon(1e-5));
    CHECK(kp[8].y == doctest::Approx(8.0 + 2.0 * std::sin(theta)).epsilon(1e-5));
  }
}

TEST_CASE("clean keypoints stay on the canvas for every class") {
  SynthConfig cfg;
  for (int c = 0; c < 8; ++c) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const VideoRenderer r(c, c, seed * 977 + 3, cfg);
      for (const auto& frame : r.clean_pose_frames()) {
        for (const auto& kp : frame.persons.at(0).keypoints) {
          CHECK((kp.x >= 0.0f && kp.x <= 15.0f && kp.y >= 0.0f && kp.y <= 15.0f));
        }
      }
    }
  }
}

TEST_CASE("near-duplicate classes differ only at the wrists") {
  SynthConfig cfg;
  const VideoParams params{7.5f, 8.0f, 1.0f};
  for (int t = 0; t < 48; ++t) {
    const auto a = motion_keypoints(MotionClass::kPunch, t, 48, params, cfg);
    const auto b = motion_keypoints(MotionClass::kPunchTwist, t, 48, params, cfg);
    for (int k = 0; k < 13; ++k) {
      const double d = std::hypot(a[k].x - b[k].x, a[k].y - b[k].y);
      if (k == 6 || k == 7) CHECK(d == doctest::Approx(cfg.punch_twist_radius).epsilon(1e-4));
      else CHECK(d == 0.0);
    }
  }
}

TEST_CASE("dropout and noise extremes") {
  SynthConfig cfg;
  cfg.pose_dropout = 1.0f;
  const VideoRenderer dropped(2, 2, 5, cfg);
  for (const auto& f : dropped.pose_frames()) CHECK(f.persons.empty());
  cfg.pose_dropout = 0.0f;
  cfg.pose_noise = 0.0f;
  const VideoRenderer clean(2, 2, 5, cfg);
  for (std::size_t t = 0; t < clean.pose_frames().size(); ++t) {
    const auto& a = clean.pose_frames()[t].persons.at(0).keypoints;
    const auto& b = clean.clean_pose_frames()[t].persons.at(0).keypoints;
    for (std::size_t k = 0; k < a.size(); ++k) CHECK((a[k].x == b[k].x && a[k].y == b[k].y));
  }
}

TEST_CASE("joint discs are drawn where the pose says") {
  SynthConfig cfg;
  cfg.pose_noise = 0.0f;
  const VideoRenderer r(0, 3, 9, cfg);
  std::vector<float> frame(3 * 64 * 64);
  for (int t : {0, 17, 40}) {
    r.render_frame(t, frame.data());
    for (const auto& kp : r.clean_pose_frames()[t].persons[0].keypoints) {
      const int x = static_cast<int>(std::lround(kp.x * 4.0f)), y = static_cast<int>(std::lround(kp.y * 4.0f));
      bool white = false;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= 64 || yy >= 64) continue;
          const std::size_t i = static_cast<std::size_t>(yy) * 64 + xx;
          white |= frame[i] == 1.0f && frame[4096 + i] == 1.0f && frame[8192 + i] == 1.0f;
        }
      }
      CHECK(white);
    }
  }
}

TEST_CASE("rendering is deterministic and context-keyed") {
  SynthConfig cfg;
  const auto a = generate_video(1, 1, 42, cfg);
  const auto b = generate_video(1, 1, 42, cfg);
  CHECK(a.appearance_frames == b.appearance_frames);
  const auto c = generate_video(1, 2, 42, cfg);
  CHECK_FALSE(a.appearance_frames == c.appearance_frames);
  CHECK(a.action_label == 1);
  CHECK(c.context_label == 2);
  for (float v : a.appearance_frames.values()) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("splits: sizes, labels and contexts") {
  SynthConfig cfg;
  const auto train = make_dataset(Split::kTrain, cfg, 0);
  const auto in = make_dataset(Split::kValInContext, cfg, 0);
  const auto out = make_dataset(Split::kValOutOfContext, cfg, 0);
  CHECK(train.size() == 320);
  CHECK(in.size() == 80);
  CHECK(out.size() == 80);
  std::vector<int> counts(8, 0);
  std::set<std::string> ids;
  for (const auto& v : train) {
    CHECK(v.context == v.action);
    ++counts[static_cast<std::size_t>(v.action)];
    ids.insert(v.video_id);
  }
  CHECK(ids.size() == 320);
  for (int n : counts) CHECK(n == 40);
  for (const auto& v : in) CHECK(v.context == v.action);
  for (const auto& v : out) {
    CHECK(v.context != v.action);
    CHECK(v.context == deranged_context(v.action, 8));
  }
  std::set<std::uint64_t> seeds;
  for (const auto* split : {&train, &in, &out})
    for (const auto& v : *split) seeds.insert(v.seed);
  CHECK(seeds.size() == 480);
}

TEST_CASE("derangement has no fixed point") {
  for (int n = 2; n <= 8; ++n) {
    std::set<int> image;
    for (int a = 0; a < n; ++a) {
      CHECK(deranged_context(a, n) != a);
      image.insert(deranged_context(a, n));
    }
    CHECK(static_cast<int>(image.size()) == n);
  }
}

TEST_CASE("designed class groups") {
  SynthConfig cfg;
  CHECK(context_reliant_classes(cfg) == std::vector<int>{6, 7});
  CHECK(motion_defined_classes(cfg) == std::vector<int>{0, 3});
  cfg.num_classes = 1;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("manifest and AVC1 round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "ia_synth_io";
  std::filesystem::create_directories(dir);
  SynthConfig cfg;
  const auto vids = make_dataset(Split::kValOutOfContext, cfg, 7);
  write_manifest(dir / "m.jsonl", vids);
  const auto back = read_manifest(dir / "m.jsonl");
  REQUIRE(back.size() == vids.size());
  for (std::size_t i = 0; i < vids.size(); ++i) {
    CHECK(back[i].video_id == vids[i].video_id);
    CHECK(back[i].seed == vids[i].seed);
    CHECK(back[i].action == vids[i].action);
    CHECK(back[i].context == vids[i].context);
    CHECK(back[i].split == vids[i].split);
  }
  const VideoRenderer r(3, 4, 11, cfg);
  const auto clip = r.render_clip({0, 4, 8});
  write_appearance_clip(dir / "a.avc", clip.data);
  CHECK(read_appearance_clip(dir / "a.avc") == clip.data);
}
