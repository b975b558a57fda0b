#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

#include "integral_action/checkpoint.hpp"
#include "integral_action/config.hpp"
#include "integral_action/integrator.hpp"
#include "integral_action/pose_codec.hpp"
#include "integral_action/reports.hpp"
#include "integral_action/synth.hpp"
#include "integral_action/train_eval.hpp"

namespace py = pybind11;
using namespace integral_action;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  Tensor<T> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  Array<T> a(t.shape());
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

// JSON crosses the boundary as text; the Python side wraps these with json.loads/dumps.
ExperimentConfig config_from(const std::string& config_json) {
  return config_json.empty() ? ExperimentConfig::toy()
                             : experiment_config_from_json(nlohmann::json::parse(config_json));
}

// keypoints: T x P x K x 3 (x, y, score); NaN x marks a missing joint. scores: T x P.
std::vector<PoseFrame> frames_from_arrays(const Array<float>& keypoints, const Array<float>& scores) {
  if (keypoints.ndim() != 4 || keypoints.shape(3) != 3) throw std::invalid_argument("keypoints must be T x P x K x 3");
  if (scores.ndim() != 2 || scores.shape(0) != keypoints.shape(0) || scores.shape(1) != keypoints.shape(1)) {
    throw std::invalid_argument("person scores must be T x P");
  }
  const auto t_n = keypoints.shape(0), p_n = keypoints.shape(1), k_n = keypoints.shape(2);
  auto kp = keypoints.unchecked<4>();
  auto sc = scores.unchecked<2>();
  std::vector<PoseFrame> frames(static_cast<std::size_t>(t_n));
  for (py::ssize_t t = 0; t < t_n; ++t) {
    frames[t].frame_index = static_cast<int>(t);
    for (py::ssize_t p = 0; p < p_n; ++p) {
      PersonPose person;
      person.person_score = sc(t, p);
      for (py::ssize_t k = 0; k < k_n; ++k) {
        const float x = kp(t, p, k, 0), y = kp(t, p, k, 1);
        const bool visible = !std::isnan(x) && !std::isnan(y);
        person.keypoints.push_back({visible ? x : 0.0f, visible ? y : 0.0f, kp(t, p, k, 2), visible});
      }
      frames[t].persons.push_back(std::move(person));
    }
  }
  return frames;
}

py::tuple frames_to_arrays(const std::vector<PoseFrame>& frames, int num_keypoints) {
  std::size_t persons = 0;
  for (const auto& f : frames) persons = std::max(persons, f.persons.size());
  Array<float> kp({frames.size(), persons, static_cast<std::size_t>(num_keypoints), std::size_t{3}});
  Array<float> sc({frames.size(), persons});
  auto k = kp.mutable_unchecked<4>();
  auto s = sc.mutable_unchecked<2>();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t p = 0; p < persons; ++p) {
      const bool present = p < frames[t].persons.size();
      s(t, p) = present ? frames[t].persons[p].person_score : 0.0f;
      for (int j = 0; j < num_keypoints; ++j) {
        const Keypoint kp_j = present ? frames[t].persons[p].keypoints[j] : Keypoint{};
        const bool vis = present && kp_j.visible;
        k(t, p, j, 0) = vis ? kp_j.x : NAN;
        k(t, p, j, 1) = vis ? kp_j.y : NAN;
        k(t, p, j, 2) = vis ? kp_j.score : 0.0f;
      }
    }
  }
  return py::make_tuple(kp, sc);
}

py::dict checkpoint_dict(const Checkpoint& c) {
  py::dict tensors;
  for (const auto& t : c.tensors) tensors[py::str(t.name)] = to_array(t.value);
  py::dict d;
  d["variant"] = c.variant;
  d["stage"] = c.stage;
  d["metadata"] = c.metadata.dump();
  d["tensors"] = tensors;
  return d;
}

Dataset dataset_for(const std::string& data_dir, const std::string& split, const ExperimentConfig& cfg) {
  const Split s = split_from_string(split);
  if (data_dir.empty()) return make_synthetic_dataset(s, cfg, cfg.train.seed);
  return Dataset{s, read_manifest(std::filesystem::path(data_dir) / (std::string(to_string(s)) + ".jsonl"))};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pose-driven two-stream action recognition core.";

  m.def("default_config", [] { return to_json(ExperimentConfig::toy()).dump(); });
  m.def("full_scale_config", [] { return to_json(ExperimentConfig::full_scale()).dump(); });
  m.def("normalize_config", [](const std::string& j) { return to_json(config_from(j)).dump(); }, py::arg("config"));

  m.def(
      "encode_pose_clip",
      [](const Array<float>& keypoints, const Array<float>& scores, const std::string& config) {
        const auto cfg = config_from(config);
        return to_array(encode_pose_clip(frames_from_arrays(keypoints, scores), cfg.skeleton(), cfg.codec).data);
      },
      py::arg("keypoints"), py::arg("person_scores"), py::arg("config") = "");
  m.def(
      "read_pose_frames",
      [](const std::filesystem::path& path, int num_keypoints) {
        return frames_to_arrays(read_pose_frames(path, num_keypoints), num_keypoints);
      },
      py::arg("path"), py::arg("num_keypoints") = 13);
  m.def("read_pose_clip", [](const std::filesystem::path& path) { return to_array(read_pose_clip(path).data); });
  m.def("read_appearance_clip", [](const std::filesystem::path& path) { return to_array(read_appearance_clip(path)); });

  m.def(
      "temporal_shift",
      [](const Array<double>& x, std::size_t clip_len, double fraction) {
        return to_array(nn::temporal_shift(to_tensor(x), clip_len, fraction));
      },
      py::arg("x"), py::arg("clip_len"), py::arg("fraction") = 0.125);
  m.def("integrate", [](const Array<double>& a, const Array<double>& p, const Array<double>& g) {
    return to_array(integrate(to_tensor(a), to_tensor(p), to_tensor(g)));
  });
  m.def("gate_regularizer", [](const Array<double>& g) { return gate_regularizer(to_tensor(g)); });

  m.def(
      "generate_video",
      [](int action, int context, std::uint64_t seed, const std::string& config) {
        const auto cfg = config_from(config);
        const auto v = generate_video(action, context, seed, cfg.synth);
        const py::tuple pose = frames_to_arrays(v.pose_frames, cfg.skeleton().num_keypoints);
        return py::make_tuple(to_array(v.appearance_frames), pose[0], pose[1]);
      },
      py::arg("action"), py::arg("context"), py::arg("seed"), py::arg("config") = "");
  m.def("deranged_context", &deranged_context);

  m.def("load_checkpoint", [](const std::filesystem::path& p) { return checkpoint_dict(load_checkpoint(p)); });
  m.def(
      "evaluate",
      [](const std::filesystem::path& ckpt, const std::string& split, const std::string& data_dir,
         const std::string& config, int clips, std::optional<double> weight) {
        const auto cfg = config_from(config);
        EvalOptions o;
        o.clips_per_video = clips > 0 ? clips : cfg.train.eval_clips;
        o.score_average_weight = weight;
        py::gil_scoped_release release;
        return to_json(evaluate(load_checkpoint(ckpt), dataset_for(data_dir, split, cfg), cfg, o).report).dump();
      },
      py::arg("checkpoint"), py::arg("split") = "in", py::arg("data_dir") = "", py::arg("config") = "",
      py::arg("clips") = 0, py::arg("weight") = py::none());

  m.def("top_k_accuracy", &top_k_accuracy, py::arg("probs"), py::arg("labels"), py::arg("k"));
  m.def("oracle_selection",
        py::overload_cast<const std::vector<std::vector<double>>&, const std::vector<std::vector<double>>&,
                          const std::vector<int>&>(&oracle_selection),
        py::arg("probs_appearance"), py::arg("probs_pose"), py::arg("labels"));
}
