#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctcvo/ctc_loss.hpp"
#include "ctcvo/image.hpp"
#include "ctcvo/layers.hpp"
#include "ctcvo/pose.hpp"

namespace ctcvo {

enum class Preset { Paper, Tiny };
enum class Mode { Fused, RelativeOnly, GlobalOnly };

std::string to_string(Preset p);
std::string to_string(Mode m);
Preset parse_preset(const std::string& s);
Mode parse_mode(const std::string& s);

/// One residual stage: `blocks` bottleneck units of width mid -> out; the
/// first unit carries the stride.
struct StageSpec {
  int blocks = 1;
  int mid = 8;
  int out = 8;
  int stride = 1;
  bool operator==(const StageSpec&) const = default;
};

struct ModelConfig {
  Preset preset = Preset::Tiny;
  int K = 5;
  int image_height = 64;
  int image_width = 64;
  int stem_channels = 8;
  /// Shared extractor stages 2-4, then the per-branch stage 5.
  std::array<StageSpec, 4> backbone_channels{};
  int lstm_hidden = 64;
  int lstm_layers_relative = 2;
  int lstm_layers_global = 1;
  int fc_width = 64;
  std::uint64_t seed = 1;

  static ModelConfig paper();
  static ModelConfig tiny();
  /// Throws ConfigError.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Layer table of a configuration, computed without allocating weights.
struct ModelDescription {
  std::vector<LayerInfo> layers;
  long long parameter_count = 0;
  Shape2d feature_grid;       ///< after stage 4
  int feature_channels = 0;   ///< stage-4 width
  Shape2d stage5_grid;
  int stage5_channels = 0;
  long long recurrent_input = 0;

  const LayerInfo& find(const std::string& name) const;
};

ModelDescription describe(const ModelConfig& cfg);

/// Input and target normalization. Images are standardized per channel;
/// translation heads predict standardized values that are mapped back with
/// these statistics.
struct NormStats {
  Eigen::Vector3d image_mean = Eigen::Vector3d::Constant(0.5);
  Eigen::Vector3d image_std = Eigen::Vector3d::Constant(0.25);
  Eigen::Vector3d rel_t_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d rel_t_std = Eigen::Vector3d::Ones();
  Eigen::Vector3d glob_t_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d glob_t_std = Eigen::Vector3d::Ones();
};

/// Image statistics over all frames; std floored at 1e-3.
void fit_image_stats(std::span<const Image> frames, NormStats& stats);
/// Translation statistics over a camera-to-world trajectory: positions for
/// the global heads, adjacent ego-motion translations for the relative heads.
void fit_pose_stats(std::span<const Pose> trajectory, NormStats& stats);

struct ForwardOptions {
  Mode mode = Mode::Fused;
  /// relative_only: first pose used to integrate global poses; without it
  /// no global poses are produced.
  std::optional<Pose> anchor;
  /// global_only: take pair transforms from the relative branch instead of
  /// deriving them from the predicted global poses.
  bool pairs_from_relative = false;
};

/// Tape handles for one window. Every pose is a 1x7 raw row [t, q].
struct WindowOutput {
  std::vector<ad::Var> global;    ///< K, may be empty (relative_only without anchor)
  std::vector<ad::Var> adjacent;  ///< K-1, empty when the relative branch did not run
  std::vector<ad::Var> pairs;     ///< one per PairSpec entry
  ad::Var fc1;                    ///< (K-1) x fc_width
  ad::Var fc2;                    ///< K x fc_width
};

WindowPrediction to_prediction(const WindowOutput& out);

/// Adds the loss of one window as a 1x1 node; `scale` multiplies the value
/// (use 1/N for batch means). Returns the unscaled terms via `terms`.
ad::Var attach_window_loss(Graph& g, const WindowOutput& out, const WindowTarget& target, const PairSpec& spec,
                           const LossWeights& w, bool with_global, double scale, LossTerms* terms = nullptr);

class VoModel {
 public:
  /// Allocates and seeds all parameters.
  explicit VoModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const PairSpec& pair_spec() const { return spec_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  NormStats& stats() { return stats_; }
  const NormStats& stats() const { return stats_; }

  /// Standardized frames as (frames*H*W) x 3. Throws ShapeMismatch on size.
  ad::Var input(Graph& g, std::span<const Image> frames) const;

  FeatureMap extract_features(Graph& g, std::span<const Image> frames) const;

  struct RelativeOut {
    ad::Var fc1;
    std::vector<ad::Var> adjacent;
  };
  RelativeOut relative_branch(Graph& g, const FeatureMap& features) const;

  struct GlobalOut {
    ad::Var fc2;
    std::vector<ad::Var> global;
  };
  GlobalOut global_branch(Graph& g, const FeatureMap& features) const;

  /// fc1 rows (K-1) are aligned to frames 1..K-1, frame 0 receives zeros.
  /// Returns K raw poses.
  std::vector<ad::Var> fuse(Graph& g, ad::Var fc1, ad::Var fc2) const;
  /// Single-step fusion of two 1 x fc_width embeddings into a 1x7 raw pose.
  ad::Var fuse_step(Graph& g, ad::Var fc1_row, ad::Var fc2_row) const;

  /// Frames must number exactly K.
  WindowOutput forward(Graph& g, std::span<const Image> frames, const ForwardOptions& opt) const;

  /// Re-estimates normalization statistics of every layer whose name starts
  /// with one of `prefixes` from a contiguous run of frames (>= 2).
  void calibrate(std::span<const Image> frames, const std::vector<std::string>& prefixes);

  /// Mask over parameter blocks selecting the given name prefixes.
  std::vector<bool> mask(const std::vector<std::string>& prefixes) const;

 private:
  struct Network {
    Conv2d stem;
    BatchNorm stem_bn;
    MaxPool pool;
    ResStage res2, res3, res4;
    ResStage rel5, glob5;
    Lstm rel_lstm, glob_lstm;
    Linear fc1, fc2, fc3;
    Linear rel_t, rel_q, glob_t, glob_q, fc4, fc5;
    Shape2d stage4, stage5;
  };
  static Network build(Builder& b, const ModelConfig& cfg);

  std::vector<ad::Var> heads(Graph& g, ad::Var embedding, const Linear& t_head, const Linear& q_head,
                             const Eigen::Vector3d& t_mean, const Eigen::Vector3d& t_std) const;
  ad::Var stage5_relative(Graph& g, const FeatureMap& f) const;

  ModelConfig cfg_;
  PairSpec spec_;
  ParameterSet params_;
  NormStats stats_;
  Network net_;

  friend ModelDescription describe(const ModelConfig& cfg);
};

/// Composes adjacent raw transforms into the transform for frames (i, j).
ad::Var compose_adjacent(const std::vector<ad::Var>& adjacent, int i, int j);

}  // namespace ctcvo
