#pragma once

#include <span>
#include <utility>
#include <vector>

#include "ctcvo/pose.hpp"
#include "ctcvo/raw_pose.hpp"

namespace ctcvo {

/// Frame-index pairs (i, j), i < j, over a K-frame window whose predicted
/// transforms are constrained against ground truth.
struct PairSpec {
  int K = 0;
  std::vector<std::pair<int, int>> pairs;

  std::size_t size() const { return pairs.size(); }
};

/// Dyadic pair set: every (i, i+s) with s a power of two, i a multiple of s,
/// then (0, K-1) if missing. Adjacent pairs come first. For K = 5 this is
/// [(0,1),(1,2),(2,3),(3,4),(0,2),(2,4),(0,4)].
/// Throws InvalidK unless 2 <= K <= 32.
PairSpec make_pair_spec(int K);

struct WindowTarget {
  std::vector<Pose> gt_global;  ///< K camera-to-world poses
  std::vector<Pose> gt_pairs;   ///< ego_motion(gt_global[i], gt_global[j]) per pair
};

/// Builds pair targets from the window's global poses.
WindowTarget make_window_target(std::vector<Pose> gt_global, const PairSpec& spec);

/// True when every pair target agrees with the globals within `tol`.
bool target_is_consistent(const WindowTarget& tgt, const PairSpec& spec, double tol = 1e-9);

struct WindowPrediction {
  std::vector<RawPose> pred_global;
  std::vector<RawPose> pred_pairs;
};

/// d(loss)/d(prediction), shaped like the prediction.
struct WindowGradient {
  std::vector<RawPose> d_global;
  std::vector<RawPose> d_pairs;
};

struct LossWeights {
  double beta_rot = 1.0;       ///< multiplies the quaternion term
  double lambda_global = 1.0;  ///< multiplies the global-pose term of the joint loss
};

/// Per-window split of the joint loss.
struct LossTerms {
  double ctc = 0.0;     ///< sum over pairs
  double global = 0.0;  ///< sum over frames (unweighted)
  double total = 0.0;   ///< ctc + lambda_global * global
};

/// |t_pred - t_gt|^2 + beta_rot |q_pred/|q_pred| - s q_gt|^2, where s = +-1
/// aligns the ground-truth sign with the prediction. Writes d/d(pred) when
/// `grad` is given.
double pose_mse(const RawPose& pred, const Pose& gt, const LossWeights& w,
                RawPose* grad = nullptr);

/// One residual per pair, in PairSpec order.
std::vector<double> ctc_residuals(const WindowPrediction& pred, const WindowTarget& tgt,
                                  const PairSpec& spec, const LossWeights& w);

/// Mean over the batch of per-window CTC sums. `grads`, when given, is
/// resized to the batch and receives d/d(pred_pairs).
double relative_loss(std::span<const WindowPrediction> preds,
                     std::span<const WindowTarget> targets, const PairSpec& spec,
                     const LossWeights& w, std::vector<WindowGradient>* grads = nullptr);

/// Mean over the batch of CTC sum + lambda_global * global MSE sum.
double joint_loss(std::span<const WindowPrediction> preds,
                  std::span<const WindowTarget> targets, const PairSpec& spec,
                  const LossWeights& w, std::vector<WindowGradient>* grads = nullptr);

/// Unaveraged terms for one window; fills `grad` for both pairs and globals.
/// `with_global` = false drops the global term (relative loss).
LossTerms window_loss(const WindowPrediction& pred, const WindowTarget& tgt,
                      const PairSpec& spec, const LossWeights& w, bool with_global,
                      WindowGradient* grad = nullptr);

}  // namespace ctcvo
