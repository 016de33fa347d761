#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ctcvo/dataset.hpp"
#include "ctcvo/model.hpp"
#include "ctcvo/pose.hpp"
#include "ctcvo/trainer.hpp"

namespace ctcvo {

struct TrajectoryEstimate {
  std::vector<Pose> poses;  ///< camera-to-world
  std::vector<std::size_t> frame_ids;
  Mode mode = Mode::Fused;

  std::size_t size() const { return poses.size(); }
};

/// pose[0] = start, pose[i+1] = compose(transforms[i], pose[i]). Transforms
/// are world-frame relatives as produced by relative(). Throws EmptyBatch.
TrajectoryEstimate accumulate_trajectory(const Pose& start, const std::vector<Pose>& transforms);

/// Same chain driven by camera-frame ego-motions (ego_motion(P_i, P_i+1)).
TrajectoryEstimate integrate_ego_motion(const Pose& start, const std::vector<Pose>& ego);

struct MedianReport {
  double t_med = 0.0;  ///< m
  double r_med = 0.0;  ///< deg
};

/// Per-frame position distance and rotation angle, median of each (even
/// counts average the middle two). Throws LengthMismatch or EmptyBatch.
MedianReport median_pose_errors(const std::vector<Pose>& pred, const std::vector<Pose>& gt);
double median(std::vector<double> values);

inline constexpr std::array<double, 8> kDriftLengths = {100, 200, 300, 400, 500, 600, 700, 800};

struct LengthDrift {
  double length = 0.0;     ///< m
  double t_rel = 0.0;      ///< %
  double r_rel = 0.0;      ///< deg / 100 m
  std::size_t segments = 0;
};

struct DriftReport {
  double t_rel = 0.0;  ///< %
  double r_rel = 0.0;  ///< deg / 100 m
  std::vector<LengthDrift> per_length;  ///< only lengths with at least one segment
  /// True when the ground-truth path is shorter than the first length.
  bool empty = true;
};

/// Segment drift. For every start frame and length L the end frame is the
/// first whose cumulative ground-truth path length reaches L. Segment errors
/// inv(pred_seg) * gt_seg are normalized by L; each length contributes the
/// RMSE over its segments and the report averages those over lengths.
/// Throws LengthMismatch.
DriftReport kitti_drift(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                        const std::array<double, 8>& lengths = kDriftLengths);

/// Cumulative path length per frame, starting at 0.
std::vector<double> path_distances(const std::vector<Pose>& gt);

/// key=value lines.
std::string format_report(const DriftReport& drift, const MedianReport& med);

/// One-line table rows in the usual per-sequence layout, closed by an average.
std::string format_drift_table(const std::vector<std::pair<std::string, DriftReport>>& rows);

/// Runs the model over a sequence in windows of K frames sharing one frame
/// with their neighbour (stride K-1); a final window is aligned to the end
/// when frames remain. Relative-only trajectories integrate the adjacent
/// predictions from the first ground-truth pose; fused and global-only
/// trajectories take each frame's predicted global pose from the first
/// window that contains it.
TrajectoryEstimate predict_trajectory(const VoModel& model, const SequenceRecord& seq, Mode mode);

/// Writes `frame pred_x pred_y pred_z gt_x gt_y gt_z` rows plus
/// `<path>.metrics` with the drift and median reports of the unaligned
/// trajectories. `align` applies a rigid least-squares fit of pred onto gt to
/// the written coordinates only. Throws IoError or LengthMismatch.
void emit_plot_data(const TrajectoryEstimate& pred, const std::vector<Pose>& gt, const std::string& path,
                    bool align = false);

struct PlotRow {
  std::size_t frame = 0;
  Eigen::Vector3d pred, gt;
};
std::vector<PlotRow> read_plot_data(const std::string& path);
/// Parses a key=value metrics file.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path);

struct Variant {
  Mode mode = Mode::Fused;
  int K = 5;
};

struct AblationRow {
  Variant variant;
  DriftReport drift;
  MedianReport median;
  double final_loss = 0.0;
  double seconds = 0.0;
};

/// Training budget and data shared by every variant.
struct AblationSetup {
  ModelConfig model;          ///< K is overridden per variant
  TrainConfig train;          ///< epochs etc. applied to every stage
  SequenceRecord train_data;
  SequenceRecord test_data;
  std::string work_dir;       ///< checkpoints and registries, one subdirectory per variant
};

/// Trains each variant with the stages its mode needs (relative_only:
/// stage 1; global_only: stages 1-2; fused: stages 1-3) under the same
/// budget, then evaluates drift and median errors on the test data in that
/// mode. Rows follow input order.
std::vector<AblationRow> ablation_sweep(const std::vector<Variant>& variants, const AblationSetup& setup);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace ctcvo
