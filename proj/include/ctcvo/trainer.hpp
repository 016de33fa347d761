#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctcvo/checkpoint.hpp"
#include "ctcvo/dataset.hpp"
#include "ctcvo/model.hpp"

namespace ctcvo {

enum class Stage { RelativePretrain, GlobalPretrain, EndToEnd };

std::string to_string(Stage s);
/// Accepts relative_pretrain, global_pretrain, end_to_end. Throws ConfigError.
Stage parse_stage(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::RelativePretrain;
  int epochs = 1;  ///< 0 writes the starting point unchanged
  int batch_size = 8;
  double lr0 = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// 0 = epochs * batches per epoch.
  long long total_iterations = 0;
  double grad_clip = 10.0;  ///< global-norm bound; 0 disables
  LossWeights loss;
  int window_stride = 1;
  int calibration_frames = 64;  ///< contiguous frames for normalization statistics

  std::string scene_id;         ///< stages 2 and 3
  bool overwrite_scene = false;
  bool pairs_from_relative = false;  ///< stage 2: CTC pairs from the frozen relative branch

  std::string base_checkpoint;    ///< stage-1 output, read by stages 2 and 3
  std::string registry_dir;       ///< scene entries, written by stage 2, read by stage 3
  std::string output_checkpoint;  ///< full checkpoint of this stage
  std::string resume_checkpoint;  ///< continue an interrupted run of the same stage
  std::string log_path;           ///< per-iteration log; empty disables

  std::uint64_t seed = 1;
  /// Stop after this many epochs in this invocation (-1 = run to `epochs`).
  int stop_after = -1;

  /// Throws ConfigError.
  void validate() const;
};

/// lr0 * 2^-floor(5 * iteration / total): five plateaus. Throws ConfigError
/// outside [0, total).
double lr_schedule(long long iteration, long long total_iterations, double lr0);

/// Adam with bias correction over the blocks selected by `mask`.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps);

  /// Applies one step to every block with a nonempty gradient.
  void step(ParameterSet& params, const Gradients& grads, double lr);

  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  double beta1_, beta2_, eps_;
  AdamState state_;
};

/// Per-scene global-branch parameters and position statistics, one
/// checkpoint file per scene id inside a directory.
class SceneRegistry {
 public:
  explicit SceneRegistry(std::string dir);

  bool contains(const std::string& scene_id) const;
  std::vector<std::string> scenes() const;
  std::string path(const std::string& scene_id) const;

  /// Throws SceneExists unless `overwrite`.
  void put(const std::string& scene_id, const VoModel& model, const TrainingState& state, bool overwrite);
  /// Throws UnknownScene.
  Checkpoint get(const std::string& scene_id) const;
  /// Installs a scene's global branch and position statistics into `model`.
  /// Throws UnknownScene or CheckpointMismatch.
  void load_into(VoModel& model, const std::string& scene_id) const;

 private:
  std::string dir_;
};

struct StageResult {
  VoModel model;
  TrainingState state;
};

/// Mean loss terms over all windows of a sequence.
struct LossSummary {
  double loss = 0.0;
  double ctc = 0.0;
  double global = 0.0;
  std::size_t windows = 0;
};

LossSummary evaluate_loss(const VoModel& model, const SequenceRecord& seq, const ForwardOptions& opt, bool with_global,
                          const LossWeights& w, int stride = 1);

/// Stage 1: extractor and relative branch, relative-only mode, CTC loss.
StageResult pretrain_relative(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data);
/// Stage 2: extractor frozen, global branch trained under the joint loss with
/// pairs derived from the predicted globals; writes a registry entry.
StageResult pretrain_global(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data);
/// Stage 3: stage-1 weights plus a registry entry, everything trainable,
/// fused mode, joint loss.
StageResult finetune_end_to_end(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data);

/// Dispatches on cfg.stage.
StageResult run_stage(const TrainConfig& cfg, const ModelConfig& model_cfg, const SequenceRecord& data);

/// Stage-3 starting point: stage-1 checkpoint plus the scene entry.
VoModel assemble(const ModelConfig& model_cfg, const std::string& base_checkpoint, const std::string& registry_dir,
                 const std::string& scene_id);

}  // namespace ctcvo
