#include "ctcvo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ctcvo/errors.hpp"

namespace ctcvo {

namespace fs = std::filesystem;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::RelativePretrain: return "relative_pretrain";
    case Stage::GlobalPretrain: return "global_pretrain";
    case Stage::EndToEnd: return "end_to_end";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "relative_pretrain") return Stage::RelativePretrain;
  if (s == "global_pretrain") return Stage::GlobalPretrain;
  if (s == "end_to_end") return Stage::EndToEnd;
  throw ConfigError("unknown stage '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (total_iterations < 0) throw ConfigError("total_iterations must be >= 0");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  if (loss.beta_rot < 0.0 || loss.lambda_global < 0.0) throw ConfigError("loss weights must be >= 0");
  if (window_stride < 1) throw ConfigError("window_stride must be >= 1");
  if (calibration_frames < 2) throw ConfigError("calibration_frames must be >= 2");
  if (stage != Stage::RelativePretrain) {
    if (scene_id.empty()) throw ConfigError("scene_id is required for " + to_string(stage));
    if (base_checkpoint.empty() && resume_checkpoint.empty())
      throw ConfigError("base_checkpoint is required for " + to_string(stage));
    if (registry_dir.empty()) throw ConfigError("registry_dir is required for " + to_string(stage));
  }
  if (scene_id.find_first_of("/\\") != std::string::npos || scene_id == "." || scene_id == "..")
    throw ConfigError("scene_id must be a plain name");
}

double lr_schedule(long long iteration, long long total_iterations, double lr0) {
  if (total_iterations <= 0 || iteration < 0 || iteration >= total_iterations)
    throw ConfigError("iteration " + std::to_string(iteration) + " outside [0, " + std::to_string(total_iterations) +
                      ")");
  const long long plateau = (5 * iteration) / total_iterations;
  return std::ldexp(lr0, -static_cast<int>(plateau));
}

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterSet& params, const Gradients& grads, double lr) {
  const std::size_t n = static_cast<std::size_t>(params.size());
  state_.m.resize(n);
  state_.v.resize(n);
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < n && i < grads.blocks.size(); ++i) {
    const Eigen::MatrixXd& g = grads.blocks[i];
    if (g.size() == 0) continue;
    Eigen::MatrixXd& p = params.value(static_cast<int>(i));
    if (state_.m[i].size() == 0) {
      state_.m[i] = Eigen::MatrixXd::Zero(p.rows(), p.cols());
      state_.v[i] = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    }
    state_.m[i] = beta1_ * state_.m[i] + (1.0 - beta1_) * g;
    state_.v[i] = beta2_ * state_.v[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr * (state_.m[i].array() / c1) / ((state_.v[i].array() / c2).sqrt() + eps_);
  }
}

SceneRegistry::SceneRegistry(std::string dir) : dir_(std::move(dir)) {}

std::string SceneRegistry::path(const std::string& scene_id) const {
  return (fs::path(dir_) / (scene_id + ".scene")).string();
}

bool SceneRegistry::contains(const std::string& scene_id) const { return fs::exists(path(scene_id)); }

std::vector<std::string> SceneRegistry::scenes() const {
  std::vector<std::string> out;
  if (!fs::is_directory(dir_)) return out;
  for (const auto& e : fs::directory_iterator(dir_))
    if (e.path().extension() == ".scene") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

void SceneRegistry::put(const std::string& scene_id, const VoModel& model, const TrainingState& state,
                        bool overwrite) {
  if (contains(scene_id) && !overwrite)
    throw SceneExists("scene '" + scene_id + "' already registered in " + dir_);
  fs::create_directories(dir_);
  save_checkpoint(path(scene_id), model, state, nullptr, {"glob."});
}

Checkpoint SceneRegistry::get(const std::string& scene_id) const {
  if (!contains(scene_id)) throw UnknownScene("no entry for scene '" + scene_id + "' in " + dir_);
  Checkpoint ck = read_checkpoint(path(scene_id));
  if (ck.state.scene_id != scene_id)
    throw UnknownScene("entry " + path(scene_id) + " belongs to scene '" + ck.state.scene_id + "'");
  return ck;
}

void SceneRegistry::load_into(VoModel& model, const std::string& scene_id) const {
  const Checkpoint ck = get(scene_id);
  load_blocks(model, ck, {"glob."});
  model.stats().glob_t_mean = ck.stats.glob_t_mean;
  model.stats().glob_t_std = ck.stats.glob_t_std;
}

LossSummary evaluate_loss(const VoModel& model, const SequenceRecord& seq, const ForwardOptions& opt, bool with_global,
                          const LossWeights& w, int stride) {
  const ModelConfig& mc = model.config();
  const std::vector<Image> frames = load_frames(seq, mc.image_height, mc.image_width);
  LossSummary s;
  for (const WindowSample& win : WindowStream(seq, mc.K, stride, model.pair_spec())) {
    Graph g(model.params());
    ForwardOptions o = opt;
    if (o.mode == Mode::RelativeOnly && with_global) o.anchor = win.target.gt_global.front();
    const WindowOutput out = model.forward(g, std::span<const Image>(frames.data() + win.start, mc.K), o);
    LossTerms t;
    attach_window_loss(g, out, win.target, model.pair_spec(), w, with_global, 1.0, &t);
    s.loss += t.total;
    s.ctc += t.ctc;
    s.global += t.global;
    ++s.windows;
  }
  if (s.windows > 0) {
    s.loss /= static_cast<double>(s.windows);
    s.ctc /= static_cast<double>(s.windows);
    s.global /= static_cast<double>(s.windows);
  }
  return s;
}

namespace {

struct StagePlan {
  std::vector<std::string> trainable;
  std::vector<std::string> calibrate;
  ForwardOptions forward;
  bool with_global = false;
};

StagePlan plan_for(const TrainConfig& cfg) {
  StagePlan p;
  switch (cfg.stage) {
    case Stage::RelativePretrain:
      p.trainable = {"cnn1.", "rel."};
      p.calibrate = {"cnn1.", "rel."};
      p.forward.mode = Mode::RelativeOnly;
      break;
    case Stage::GlobalPretrain:
      p.trainable = {"glob."};
      p.calibrate = {"glob."};
      p.forward.mode = Mode::GlobalOnly;
      p.forward.pairs_from_relative = cfg.pairs_from_relative;
      p.with_global = true;
      break;
    case Stage::EndToEnd:
      p.trainable = {"cnn1.", "rel.", "glob.", "fuse."};
      p.forward.mode = Mode::Fused;
      p.with_global = true;
      break;
  }
  return p;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, Stage stage, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

/// First `count` contiguous frames, at least two.
std::span<const Image> calibration_run(const std::vector<Image>& frames, int count) {
  const std::size_t n = std::min<std::size_t>(frames.size(), static_cast<std::size_t>(count));
  return std::span<const Image>(frames.data(), n);
}

class TrainLog {
 public:
  explicit TrainLog(const std::string& path) {
    if (path.empty()) return;
    if (!fs::path(path).parent_path().empty()) fs::create_directories(fs::path(path).parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open log " + path);
  }
  void write(const std::string& line) {
    if (out_.is_open()) out_ << line << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

/// Shared optimization loop. `state` and `adam` carry over between calls so
/// an interrupted run resumes exactly.
void train(VoModel& model, const TrainConfig& cfg, const StagePlan& plan, const SequenceRecord& data,
           const std::vector<Image>& frames, TrainingState& state, Adam& adam) {
  const ModelConfig& mc = model.config();
  const WindowStream windows(data, mc.K, cfg.window_stride, model.pair_spec());
  const std::size_t n = windows.size();
  const long long per_epoch = static_cast<long long>((n + cfg.batch_size - 1) / cfg.batch_size);
  const long long needed = per_epoch * cfg.epochs;
  if (state.total_iterations == 0) state.total_iterations = cfg.total_iterations > 0 ? cfg.total_iterations : needed;
  if (state.total_iterations < needed)
    throw ConfigError("total_iterations " + std::to_string(state.total_iterations) + " is below the " +
                      std::to_string(needed) + " iterations of " + std::to_string(cfg.epochs) + " epochs");

  std::vector<WindowSample> samples;
  samples.reserve(n);
  for (const WindowSample& w : windows) samples.push_back(w);

  const std::vector<bool> mask = model.mask(plan.trainable);
  TrainLog log(cfg.log_path);
  int run_epochs = 0;
  while (state.epochs_done < cfg.epochs && (cfg.stop_after < 0 || run_epochs < cfg.stop_after)) {
    const int epoch = state.epochs_done + 1;
    const std::vector<std::size_t> order = epoch_order(n, state.seed, cfg.stage, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const auto start_time = std::chrono::steady_clock::now();
      const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      const double lr = lr_schedule(state.iteration, state.total_iterations, cfg.lr0);
      Gradients grads;
      LossTerms batch;
      for (std::size_t k = b0; k < b1; ++k) {
        const WindowSample& win = samples[order[k]];
        Graph g(model.params(), mask);
        const std::string where = "iteration " + std::to_string(state.iteration) + ", lr " + fmt(lr) + ", window " +
                                  std::to_string(win.start) + " of '" + data.id + "'";
        LossTerms t;
        ad::Var loss;
        try {
          const WindowOutput out =
              model.forward(g, std::span<const Image>(frames.data() + win.start, mc.K), plan.forward);
          loss = attach_window_loss(g, out, win.target, model.pair_spec(), cfg.loss, plan.with_global, scale, &t);
        } catch (const DegenerateQuaternion& e) {
          throw NonFiniteLoss(where + " (" + e.what() + ")");
        }
        if (!std::isfinite(t.total)) throw NonFiniteLoss(where);
        g.backward(loss, grads);
        batch.total += scale * t.total;
        batch.ctc += scale * t.ctc;
        batch.global += scale * t.global;
        rec.loss += t.total;
        rec.ctc += t.ctc;
        rec.global += t.global;
      }
      const double norm = std::sqrt(grads.squared_norm());
      if (!std::isfinite(norm))
        throw NonFiniteLoss("gradient at iteration " + std::to_string(state.iteration) + ", lr " + fmt(lr) +
                            ", batch starting at window " + std::to_string(samples[order[b0]].start));
      if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) grads.scale(cfg.grad_clip / norm);
      adam.step(model.params(), grads, lr);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_time).count();
      log.write("stage=" + to_string(cfg.stage) + " epoch=" + std::to_string(epoch) +
                " iteration=" + std::to_string(state.iteration) + " lr=" + fmt(lr) + " loss=" + fmt(batch.total) +
                " ctc=" + fmt(batch.ctc) + " global=" + fmt(batch.global) + " grad_norm=" + fmt(norm) +
                " wall_ms=" + fmt(ms));
      ++state.iteration;
    }
    rec.loss /= static_cast<double>(n);
    rec.ctc /= static_cast<double>(n);
    rec.global /= static_cast<double>(n);
    state.history.push_back(rec);
    ++state.epochs_done;
    ++run_epochs;
  }
}

struct Start {
  VoModel model;
  TrainingState state;
  Adam adam;
};

/// Resumed runs take model, optimizer and progress from the checkpoint.
std::optional<Start> resume(const TrainConfig& cfg, const ModelConfig& model_cfg) {
  if (cfg.resume_checkpoint.empty()) return std::nullopt;
  Checkpoint ck = read_checkpoint(cfg.resume_checkpoint);
  if (!same_architecture(ck.config, model_cfg))
    throw CheckpointMismatch("resume checkpoint architecture differs: " + describe_difference(model_cfg, ck.config));
  if (ck.state.stage != to_string(cfg.stage))
    throw CheckpointMismatch("resume checkpoint is from stage " + ck.state.stage + ", not " + to_string(cfg.stage));
  Start s{model_from_checkpoint(ck), ck.state, Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)};
  if (ck.adam) s.adam.state() = *ck.adam;
  return s;
}

TrainingState fresh_state(const TrainConfig& cfg) {
  TrainingState s;
  s.stage = to_string(cfg.stage);
  s.scene_id = cfg.scene_id;
  s.seed = cfg.seed;
  return s;
}

void finish(const TrainConfig& cfg, const VoModel& model, const TrainingState& state, const Adam& adam) {
  if (cfg.output_checkpoint.empty()) return;
  const fs::path out(cfg.output_checkpoint);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  save_checkpoint(cfg.output_checkpoint, model, state, &adam.state());
}

Checkpoint read_base(const TrainConfig& cfg, const ModelConfig& model_cfg) {
  Checkpoint base = read_checkpoint(cfg.base_checkpoint);
  if (!same_architecture(base.config, model_cfg))
    throw CheckpointMismatch("base checkpoint architecture differs: " + describe_difference(model_cfg, base.config));
  return base;
}

StageResult run(TrainConfig cfg, const ModelConfig& model_cfg, const SequenceRecord& data, Stage stage) {
  cfg.stage = stage;
  cfg.validate();
  model_cfg.validate();
  const std::vector<Image> frames = load_frames(data, model_cfg.image_height, model_cfg.image_width);
  const StagePlan plan = plan_for(cfg);

  if (stage == Stage::GlobalPretrain && !cfg.overwrite_scene && SceneRegistry(cfg.registry_dir).contains(cfg.scene_id))
    throw SceneExists("scene '" + cfg.scene_id + "' already registered in " + cfg.registry_dir);
  std::optional<Start> start = resume(cfg, model_cfg);
  if (!start) {
    start.emplace(Start{VoModel(model_cfg), fresh_state(cfg), Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)});
    VoModel& m = start->model;
    switch (stage) {
      case Stage::RelativePretrain: {
        fit_image_stats(frames, m.stats());
        fit_pose_stats(data.gt, m.stats());
        break;
      }
      case Stage::GlobalPretrain: {
        m = model_from_checkpoint(read_base(cfg, model_cfg));
        NormStats scene;
        fit_pose_stats(data.gt, scene);
        m.stats().glob_t_mean = scene.glob_t_mean;
        m.stats().glob_t_std = scene.glob_t_std;
        break;
      }
      case Stage::EndToEnd:
        m = assemble(model_cfg, cfg.base_checkpoint, cfg.registry_dir, cfg.scene_id);
        break;
    }
    if (!plan.calibrate.empty() && cfg.epochs > 0)
      m.calibrate(calibration_run(frames, cfg.calibration_frames), plan.calibrate);
  }

  train(start->model, cfg, plan, data, frames, start->state, start->adam);
  finish(cfg, start->model, start->state, start->adam);
  if (stage == Stage::GlobalPretrain && start->state.epochs_done == cfg.epochs)
    SceneRegistry(cfg.registry_dir).put(cfg.scene_id, start->model, start->state, cfg.overwrite_scene);
  return StageResult{std::move(start->model), std::move(start->state)};
}

}  // namespace

VoModel assemble(const ModelConfig& model_cfg, const std::string& base_checkpoint, const std::string& registry_dir,
                 const std::string& scene_id) {
  Checkpoint base = read_checkpoint(base_checkpoint);
  if (!same_architecture(base.config, model_cfg))
    throw CheckpointMismatch("base checkpoint architecture differs: " + describe_difference(model_cfg, base.config));
  VoModel model = model_from_checkpoint(base);
  SceneRegistry(registry_dir).load_into(model, scene_id);
  return model;
}

StageResult pretrain_relative(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data) {
  return run(cfg, model_cfg, data, Stage::RelativePretrain);
}

StageResult pretrain_global(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data) {
  return run(cfg, model_cfg, data, Stage::GlobalPretrain);
}

StageResult finetune_end_to_end(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data) {
  return run(cfg, model_cfg, data, Stage::EndToEnd);
}

StageResult run_stage(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data) {
  return run(cfg, model_cfg, data, cfg.stage);
}

}  // namespace ctcvo
