#include "ctcvo/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ctcvo/config.hpp"
#include "ctcvo/errors.hpp"

namespace ctcvo {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string runs_dir = "runs";
  std::string run_dir;
  long long seed = -1;

  // synth
  std::string synth_out;
  std::string synth_sequence = "00";
  int synth_frames = 320;
  double circuit_radius = 0.0;
  int synth_size = 64;
  double speed_min = 20.0, speed_max = 30.0;

  // training and evaluation
  std::string base, registry, scene, resume, checkpoint;
  bool overwrite = false;
  std::string pred, gt, plot_out, variants;
  std::string mode;
  bool align = false;
};

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return s.str();
}

/// Creates `<runs>/<timestamp>-seed<seed>-<command>` (or the explicit
/// directory) and writes the configuration snapshot into it.
fs::path make_run_dir(const Options& o, const RunConfig& cfg, const std::string& command,
                      const std::vector<std::string>& args) {
  fs::path dir;
  if (!o.run_dir.empty()) {
    dir = o.run_dir;
  } else {
    const std::string stem = timestamp() + "-seed" + std::to_string(cfg.train.seed) + "-" + command;
    dir = fs::path(o.runs_dir) / stem;
    for (int k = 2; fs::exists(dir); ++k) dir = fs::path(o.runs_dir) / (stem + "-" + std::to_string(k));
  }
  fs::create_directories(dir);
  std::ofstream snap(dir / "config.txt");
  if (!snap) throw IoError("cannot write " + (dir / "config.txt").string());
  snap << "# vo";
  for (const auto& a : args) snap << ' ' << a;
  snap << '\n' << cfg.to_text();
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void print_history(std::ostream& out, const TrainingState& st) {
  for (const EpochRecord& e : st.history)
    out << "epoch " << e.epoch << " loss " << e.loss << " ctc " << e.ctc << " global " << e.global << '\n';
}

int cmd_synth(const Options& o, const RunConfig& cfg, std::ostream& out, const fs::path& run) {
  SynthParams p;
  p.n_frames = o.synth_frames;
  p.circuit_radius = o.circuit_radius;
  p.image_height = p.image_width = o.synth_size;
  p.speed_min = o.speed_min;
  p.speed_max = o.speed_max;
  p.seed = cfg.train.seed;
  const SequenceRecord seq = synth_sequence(p, o.synth_sequence);
  write_kitti_sequence(o.synth_out, seq);
  write_manifest((fs::path(o.synth_out) / ("manifest_" + o.synth_sequence + ".txt")).string(), p, o.synth_sequence);
  write_manifest((run / "manifest.txt").string(), p, o.synth_sequence);
  out << "wrote " << seq.size() << " frames of sequence " << o.synth_sequence << " to " << o.synth_out << '\n';
  return kExitOk;
}

int cmd_train(Stage stage, const Options& o, RunConfig cfg, std::ostream& out, const fs::path& run) {
  TrainConfig& t = cfg.train;
  t.stage = stage;
  if (!o.scene.empty()) t.scene_id = o.scene;
  if (o.overwrite) t.overwrite_scene = true;
  t.base_checkpoint = o.base;
  t.resume_checkpoint = o.resume;
  t.registry_dir = o.registry.empty() ? (run / "registry").string() : o.registry;
  const char* name = stage == Stage::RelativePretrain ? "relative.ckpt"
                     : stage == Stage::GlobalPretrain ? "global.ckpt"
                                                      : "fused.ckpt";
  t.output_checkpoint = (run / name).string();
  t.log_path = (run / "train.log").string();
  const SequenceRecord data = load_sequence(cfg, cfg.train_frames);
  const StageResult r = run_stage(t, cfg.model, data);
  print_history(out, r.state);
  out << "checkpoint " << t.output_checkpoint << '\n';
  if (stage == Stage::GlobalPretrain) out << "scene " << t.scene_id << " registered in " << t.registry_dir << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, RunConfig cfg, std::ostream& out, const fs::path& run) {
  TrajectoryEstimate est;
  std::vector<Pose> gt;
  if (!o.pred.empty() || !o.gt.empty()) {
    if (o.pred.empty() || o.gt.empty()) throw UsageError("--pred and --gt go together");
    est.poses = read_kitti_poses(o.pred);
    gt = read_kitti_poses(o.gt);
    for (std::size_t i = 0; i < est.poses.size(); ++i) est.frame_ids.push_back(i);
    est.mode = cfg.eval_mode;
  } else {
    if (o.checkpoint.empty()) throw UsageError("eval needs --checkpoint or --pred/--gt");
    const Checkpoint ck = read_checkpoint(o.checkpoint);
    if (!same_architecture(ck.config, cfg.model))
      throw CheckpointMismatch("checkpoint architecture differs from the configuration: " +
                               describe_difference(cfg.model, ck.config));
    VoModel model = model_from_checkpoint(ck);
    if (!o.scene.empty()) {
      if (o.registry.empty()) throw UsageError("--scene needs --registry");
      SceneRegistry(o.registry).load_into(model, o.scene);
    }
    const SequenceRecord test = load_sequence(cfg, cfg.test_frames);
    est = predict_trajectory(model, test, cfg.eval_mode);
    gt = test.gt;
    write_kitti_poses((run / "pred_poses.txt").string(), est.poses);
  }
  const DriftReport drift = kitti_drift(est.poses, gt);
  const MedianReport med = median_pose_errors(est.poses, gt);
  const std::string report = "mode=" + to_string(est.mode) + "\n" + format_report(drift, med);
  write_text(run / "report.txt", report);
  emit_plot_data(est, gt, (run / "trajectory.txt").string());
  out << report;
  return kExitOk;
}

int cmd_ablate(const Options& o, RunConfig cfg, std::ostream& out, const fs::path& run) {
  if (!o.variants.empty()) cfg.ablate_variants = parse_variants(o.variants);
  AblationSetup s;
  s.model = cfg.model;
  s.train = cfg.train;
  s.train_data = load_sequence(cfg, cfg.train_frames);
  s.test_data = load_sequence(cfg, cfg.test_frames);
  s.work_dir = (run / "variants").string();
  const std::vector<AblationRow> rows = ablation_sweep(cfg.ablate_variants, s);
  const std::string table = format_ablation_table(rows);
  write_text(run / "ablation.txt", table);
  out << table;
  return kExitOk;
}

int cmd_plot(const Options& o, const RunConfig& cfg, std::ostream& out, const fs::path& run) {
  TrajectoryEstimate est;
  est.poses = read_kitti_poses(o.pred);
  est.mode = cfg.eval_mode;
  for (std::size_t i = 0; i < est.poses.size(); ++i) est.frame_ids.push_back(i);
  const std::vector<Pose> gt = read_kitti_poses(o.gt);
  const std::string path = o.plot_out.empty() ? (run / "trajectory.txt").string() : o.plot_out;
  emit_plot_data(est, gt, path, o.align);
  out << "wrote " << path << " and " << path << ".metrics\n";
  return kExitOk;
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::Usage: return kExitUsage;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Numerical: return kExitNumerical;
  }
  return kExitData;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Windowed visual odometry: dataset preparation, staged training, evaluation.", "vo"};
  app.require_subcommand(1, 1);
  app.add_option("-c,--config", o.config_file, "key=value configuration file");
  app.add_option("-s,--set", o.overrides, "override one configuration key (key=value); applied after --config");
  app.add_option("--runs-dir", o.runs_dir, "parent of timestamped run directories")->capture_default_str();
  app.add_option("--run-dir", o.run_dir, "explicit run directory");
  app.add_option("--seed", o.seed, "sets train.seed and model.seed");

  CLI::App* synth = app.add_subcommand("synth", "render a synthetic sequence in the KITTI layout");
  synth->add_option("--out", o.synth_out, "dataset root")->required();
  synth->add_option("--sequence", o.synth_sequence, "sequence name")->capture_default_str();
  synth->add_option("--frames", o.synth_frames, "frame count")->capture_default_str();
  synth->add_option("--circuit-radius", o.circuit_radius, "fly laps of a closed loop (m); 0 = free flight");
  synth->add_option("--image-size", o.synth_size, "square image side (px)")->capture_default_str();
  synth->add_option("--speed-min", o.speed_min, "m/s")->capture_default_str();
  synth->add_option("--speed-max", o.speed_max, "m/s")->capture_default_str();

  CLI::App* rel = app.add_subcommand("pretrain-rel", "stage 1: extractor and relative branch");
  rel->add_option("--resume", o.resume, "continue from a stage-1 checkpoint");

  CLI::App* glob = app.add_subcommand("pretrain-glob", "stage 2: per-scene global branch");
  CLI::App* fine = app.add_subcommand("finetune", "stage 3: end-to-end refinement");
  for (CLI::App* sub : {glob, fine}) {
    sub->add_option("--base", o.base, "stage-1 checkpoint")->required();
    sub->add_option("--registry", o.registry, "scene registry directory (default: <run>/registry)");
    sub->add_option("--scene", o.scene, "scene id (overrides train.scene_id)");
    sub->add_option("--resume", o.resume, "continue from a checkpoint of this stage");
  }
  glob->add_flag("--overwrite", o.overwrite, "replace an existing scene entry");

  CLI::App* eval = app.add_subcommand("eval", "drift and median errors on the test frames");
  eval->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  eval->add_option("--registry", o.registry, "scene registry directory");
  eval->add_option("--scene", o.scene, "install this scene's global branch before evaluating");
  eval->add_option("--pred", o.pred, "predicted poses (KITTI format) instead of a model");
  eval->add_option("--gt", o.gt, "ground-truth poses (KITTI format)");
  eval->add_option("--mode", o.mode, "fused | relative_only | global_only (overrides eval.mode)");

  CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate several (mode, K) variants");
  ablate->add_option("--variants", o.variants, "e.g. fused:5,relative_only:5 (overrides ablate.variants)");

  CLI::App* plot = app.add_subcommand("plot", "trajectory table and metrics sidecar from pose files");
  plot->add_option("--pred", o.pred, "predicted poses (KITTI format)")->required();
  plot->add_option("--gt", o.gt, "ground-truth poses (KITTI format)")->required();
  plot->add_option("--out", o.plot_out, "output table (default: <run>/trajectory.txt)");
  plot->add_flag("--align", o.align, "rigidly align the plotted prediction onto the ground truth");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'vo --help' for the list of commands and options\n";
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!o.config_file.empty()) cfg = read_config_file(o.config_file, cfg);
    for (const std::string& kv : o.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed >= 0) cfg.train.seed = cfg.model.seed = static_cast<std::uint64_t>(o.seed);
    if (!o.mode.empty()) cfg.eval_mode = parse_mode(o.mode);
    cfg.model.validate();

    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    const fs::path run = make_run_dir(o, cfg, name, args);
    out << "run directory " << run.string() << '\n';
    if (name == "synth") return cmd_synth(o, cfg, out, run);
    if (name == "pretrain-rel") return cmd_train(Stage::RelativePretrain, o, cfg, out, run);
    if (name == "pretrain-glob") return cmd_train(Stage::GlobalPretrain, o, cfg, out, run);
    if (name == "finetune") return cmd_train(Stage::EndToEnd, o, cfg, out, run);
    if (name == "eval") return cmd_eval(o, cfg, out, run);
    if (name == "ablate") return cmd_ablate(o, cfg, out, run);
    if (name == "plot") return cmd_plot(o, cfg, out, run);
    throw UsageError("unknown command '" + name + "'");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace ctcvo
