// integral-action: dataset generation, training, evaluation and ablations.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "integral_action/checkpoint.hpp"
#include "integral_action/config.hpp"
#include "integral_action/reports.hpp"
#include "integral_action/synth.hpp"
#include "integral_action/train_eval.hpp"

namespace fs = std::filesystem;
using namespace integral_action;

namespace {

struct Common {
  std::string config;
  std::string data = "data";
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  ExperimentConfig load() const {
    ExperimentConfig cfg = config.empty() ? ExperimentConfig::toy() : load_experiment_config(config);
    if (seed) cfg.train.seed = *seed;
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c, bool with_data = true) {
  app->add_option("--config", c.config, "Experiment config (JSON); toy defaults when omitted");
  if (with_data) app->add_option("--data", c.data, "Directory holding the split manifests")->capture_default_str();
  app->add_option("--seed", c.seed, "Override train.seed");
  app->add_flag("-q,--quiet", c.quiet, "No per-epoch progress");
}

fs::path manifest_path(const fs::path& dir, Split split) { return dir / (std::string(to_string(split)) + ".jsonl"); }

Dataset load_split(const std::string& dir, Split split) {
  const fs::path p = manifest_path(dir, split);
  if (!fs::exists(p)) throw std::runtime_error("missing manifest " + p.string() + " (run make-dataset first)");
  return Dataset{split, read_manifest(p)};
}

Split split_arg(const std::string& s) {
  if (s == "in") return Split::kValInContext;
  if (s == "out") return Split::kValOutOfContext;
  return split_from_string(s);
}

Checkpoint load_stage(const std::string& path, const char* stage) {
  if (path.empty() || !fs::exists(path)) {
    throw std::runtime_error(std::string("missing ") + stage + " checkpoint '" + path + "'");
  }
  return load_checkpoint(path);
}

ProgressFn progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const std::string& stage, const EpochLog& log) {
    std::fprintf(stderr, "[%s] epoch %d lr %.3g loss %.4f val_top1 %.2f (%.1fs)\n", stage.c_str(), log.epoch, log.lr,
                 log.train_loss, log.val_top1, log.seconds);
  };
}

void write_metrics(const MetricsReport& r, const std::string& json_path, const std::string& csv_path,
                   int num_classes) {
  const std::string text = to_json(r).dump(2) + "\n";
  if (json_path.empty()) {
    std::cout << text;
  } else {
    write_text(json_path, text);
  }
  if (!csv_path.empty()) write_text(csv_path, metrics_csv({r}, num_classes));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-driven feature integration for action recognition"};
  app.require_subcommand(1);

  // make-dataset
  Common md;
  int export_count = 0;
  std::string write_config;
  auto* make = app.add_subcommand("make-dataset", "Write train / in-context / out-of-context manifests");
  add_common(make, md);
  make->add_option("--export", export_count, "Also write the first N videos of each split as AVC1 + NDJSON");
  make->add_option("--write-config", write_config, "Write the effective config here");

  // encode
  std::string enc_poses, enc_out, enc_skeleton, enc_config;
  auto* encode = app.add_subcommand("encode", "Encode NDJSON pose frames into a PTC1 tensor clip");
  encode->add_option("--poses", enc_poses, "Pose frames, one JSON object per line")->required();
  encode->add_option("--out", enc_out, "Output .ptc file")->required();
  encode->add_option("--skeleton", enc_skeleton, "Skeleton JSON (stick figure when omitted)");
  encode->add_option("--config", enc_config, "Experiment config for the codec section");

  // train-stream
  Common ts;
  std::string ts_kind, ts_out;
  auto* train_stream_cmd = app.add_subcommand("train-stream", "Pre-train the appearance or pose stream");
  add_common(train_stream_cmd, ts);
  train_stream_cmd->add_option("--kind", ts_kind, "appearance | pose")
      ->required()
      ->check(CLI::IsMember({"appearance", "pose"}));
  train_stream_cmd->add_option("--out", ts_out, "Checkpoint path")->required();

  // train-integrator
  Common ti;
  double ti_lambda = ModelConfig::kWeakPosePriority;
  std::string ti_source = "pose", ti_variant = "integral", ti_a, ti_p, ti_out;
  bool ti_no_freeze = false, ti_no_pretrain = false;
  auto* train_int = app.add_subcommand("train-integrator", "Train the integrator on top of the streams");
  add_common(train_int, ti);
  train_int->add_option("--lambda", ti_lambda, "Gate regulariser weight")->required();
  train_int->add_option("--gate-source", ti_source, "pose | appearance | both")
      ->check(CLI::IsMember({"pose", "appearance", "both"}));
  train_int->add_option("--variant", ti_variant, "integral | feature_fuse | no_gate")
      ->check(CLI::IsMember({"integral", "feature_fuse", "no_gate"}));
  train_int->add_option("--appearance", ti_a, "Appearance stream checkpoint");
  train_int->add_option("--pose", ti_p, "Pose stream checkpoint");
  train_int->add_flag("--no-freeze", ti_no_freeze, "Fine-tune the streams jointly");
  train_int->add_flag("--no-pretrain", ti_no_pretrain, "Start the streams from random initialisation");
  train_int->add_option("--out", ti_out, "Checkpoint path")->required();

  // evaluate
  Common ev;
  std::string ev_ckpt, ev_split = "in", ev_json, ev_csv;
  int ev_clips = -1;
  std::optional<double> ev_weight;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a validation split");
  add_common(eval_cmd, ev);
  eval_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--split", ev_split, "in | out")->check(CLI::IsMember({"in", "out", "train"}));
  eval_cmd->add_option("--clips", ev_clips, "Clips per video (train.eval_clips by default)");
  eval_cmd->add_option("--weight", ev_weight, "Score-average weight, for score_average checkpoints");
  eval_cmd->add_option("--json", ev_json, "Write the report as JSON here (stdout otherwise)");
  eval_cmd->add_option("--csv", ev_csv, "Also write the report as CSV");

  // ablate
  Common ab;
  std::string ab_a, ab_p, ab_out = "ablation";
  auto* ablate = app.add_subcommand("ablate", "Run every integration baseline against both validation splits");
  add_common(ablate, ab);
  ablate->add_option("--appearance", ab_a, "Appearance stream checkpoint")->required();
  ablate->add_option("--pose", ab_p, "Pose stream checkpoint")->required();
  ablate->add_option("--out-dir", ab_out, "Report directory")->capture_default_str();

  // gate-stats
  Common gs;
  std::string gs_ckpt, gs_split = "in", gs_csv, gs_hist, gs_json;
  auto* gate_cmd = app.add_subcommand("gate-stats", "Per-video gate distribution of a gated checkpoint");
  add_common(gate_cmd, gs);
  gate_cmd->add_option("--ckpt", gs_ckpt, "Integral checkpoint")->required();
  gate_cmd->add_option("--split", gs_split, "in | out | both")->check(CLI::IsMember({"in", "out", "both"}));
  gate_cmd->add_option("--csv", gs_csv, "Per-video gate CSV");
  gate_cmd->add_option("--json", gs_json, "Summary JSON (stdout otherwise)");
  gate_cmd->add_option("--histogram", gs_hist, "Histogram image (PPM)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make) {
      const ExperimentConfig cfg = md.load();
      fs::create_directories(md.data);
      for (Split s : {Split::kTrain, Split::kValInContext, Split::kValOutOfContext}) {
        const Dataset d = make_synthetic_dataset(s, cfg, cfg.train.seed);
        write_manifest(manifest_path(md.data, s), d.videos);
        for (int i = 0; i < std::min<int>(export_count, static_cast<int>(d.videos.size())); ++i) {
          const auto& v = d.videos[static_cast<std::size_t>(i)];
          const SyntheticVideo video = generate_video(v.action, v.context, v.seed, cfg.synth);
          write_appearance_clip(fs::path(md.data) / (v.video_id + ".avc"), video.appearance_frames);
          write_pose_frames(fs::path(md.data) / (v.video_id + ".poses.jsonl"), video.pose_frames);
        }
        if (!md.quiet) std::fprintf(stderr, "%s: %zu videos\n", to_string(s), d.videos.size());
      }
      if (!write_config.empty()) save_experiment_config(write_config, cfg);
    } else if (*encode) {
      const ExperimentConfig cfg = enc_config.empty() ? ExperimentConfig::toy() : load_experiment_config(enc_config);
      const Skeleton sk = enc_skeleton.empty() ? cfg.skeleton() : read_skeleton(enc_skeleton);
      const auto frames = read_pose_frames(enc_poses, sk.num_keypoints);
      write_pose_clip(enc_out, encode_pose_clip(frames, sk, cfg.codec));
    } else if (*train_stream_cmd) {
      const ExperimentConfig cfg = ts.load();
      const auto result = train_stream(stream_kind_from_string(ts_kind), load_split(ts.data, Split::kTrain),
                                       load_split(ts.data, Split::kValInContext), cfg, progress_printer(ts.quiet));
      save_checkpoint(ts_out, result.checkpoint);
    } else if (*train_int) {
      const ExperimentConfig cfg = ti.load();
      IntegratorOptions opt;
      opt.variant = model_variant_from_string(ti_variant);
      opt.lambda = ti_lambda;
      opt.gate_source = gate_source_from_string(ti_source);
      opt.freeze_streams = !ti_no_freeze;
      opt.pretrained = !ti_no_pretrain;
      std::optional<Checkpoint> a, p;
      if (opt.pretrained) {
        a = load_stage(ti_a, "appearance stream (train-stream --kind appearance)");
        p = load_stage(ti_p, "pose stream (train-stream --kind pose)");
      }
      const auto result = train_integrator(a ? &*a : nullptr, p ? &*p : nullptr, load_split(ti.data, Split::kTrain),
                                           load_split(ti.data, Split::kValInContext), cfg, opt, nullptr,
                                           progress_printer(ti.quiet));
      save_checkpoint(ti_out, result.checkpoint);
    } else if (*eval_cmd) {
      const ExperimentConfig cfg = ev.load();
      const Checkpoint ckpt = load_stage(ev_ckpt, "model");
      EvalOptions opt{ev_clips > 0 ? ev_clips : cfg.train.eval_clips, {}, ev_weight};
      auto res = evaluate(ckpt, load_split(ev.data, split_arg(ev_split)), cfg, opt);
      res.report.name = fs::path(ev_ckpt).stem().string();
      write_metrics(res.report, ev_json, ev_csv, cfg.model.num_classes);
    } else if (*ablate) {
      const ExperimentConfig cfg = ab.load();
      const Checkpoint a = load_stage(ab_a, "appearance stream (train-stream --kind appearance)");
      const Checkpoint p = load_stage(ab_p, "pose stream (train-stream --kind pose)");
      const auto report = ablation_suite(a, p, load_split(ab.data, Split::kTrain),
                                         load_split(ab.data, Split::kValInContext),
                                         load_split(ab.data, Split::kValOutOfContext), cfg, {},
                                         progress_printer(ab.quiet));
      fs::create_directories(ab_out);
      write_text(fs::path(ab_out) / "ablation.json", to_json(report).dump(2) + "\n");
      write_text(fs::path(ab_out) / "ablation.csv", ablation_csv(report, cfg.model.num_classes));
      for (const auto& row : report.rows) {
        std::printf("%-28s in %6.2f  out %6.2f\n", row.name.c_str(), row.in_context.top1, row.out_of_context.top1);
      }
      std::printf("%-28s in %6.2f  out %6.2f\n", "oracle_selection", report.oracle_in, report.oracle_out);
    } else if (*gate_cmd) {
      const ExperimentConfig cfg = gs.load();
      const Checkpoint ckpt = load_stage(gs_ckpt, "integral model");
      if (ckpt.variant != to_string(ModelVariant::kIntegral)) {
        throw std::runtime_error("gate-stats needs an integral checkpoint, got " + ckpt.variant);
      }
      std::vector<Split> splits;
      if (gs_split != "out") splits.push_back(Split::kValInContext);
      if (gs_split != "in") splits.push_back(Split::kValOutOfContext);
      nlohmann::json summary = nlohmann::json::object();
      std::vector<VideoResult> all;
      std::vector<std::vector<double>> series;
      for (Split s : splits) {
        const auto res = evaluate(ckpt, load_split(gs.data, s), cfg, EvalOptions{cfg.train.eval_clips, {}, {}});
        const GateStats g = gate_statistics(res.videos);
        summary[to_string(s)] = to_json(g);
        series.push_back(g.per_video);
        all.insert(all.end(), res.videos.begin(), res.videos.end());
      }
      if (!gs_csv.empty()) write_text(gs_csv, gate_csv(all));
      if (!gs_hist.empty()) write_histogram_ppm(gs_hist, series);
      if (gs_json.empty()) {
        std::cout << summary.dump(2) << "\n";
      } else {
        write_text(gs_json, summary.dump(2) + "\n");
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
