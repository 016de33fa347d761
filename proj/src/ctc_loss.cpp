#include "ctcvo/ctc_loss.hpp"

#include <algorithm>
#include <string>

#include "ctcvo/errors.hpp"

namespace ctcvo {

PairSpec make_pair_spec(int K) {
  if (K < 2 || K > 32) {
    throw InvalidK("temporal length " + std::to_string(K) + " outside [2, 32]");
  }
  PairSpec spec;
  spec.K = K;
  for (int s = 1; s <= K - 1; s *= 2) {
    for (int i = 0; i + s <= K - 1; i += s) spec.pairs.emplace_back(i, i + s);
  }
  const std::pair<int, int> span{0, K - 1};
  if (std::find(spec.pairs.begin(), spec.pairs.end(), span) == spec.pairs.end()) {
    spec.pairs.push_back(span);
  }
  return spec;
}

WindowTarget make_window_target(std::vector<Pose> gt_global, const PairSpec& spec) {
  if (static_cast<int>(gt_global.size()) != spec.K) {
    throw ShapeMismatch("window has " + std::to_string(gt_global.size()) +
                        " poses, pair spec expects " + std::to_string(spec.K));
  }
  WindowTarget tgt;
  tgt.gt_pairs.reserve(spec.size());
  for (const auto& [i, j] : spec.pairs) {
    tgt.gt_pairs.push_back(ego_motion(gt_global[i], gt_global[j]));
  }
  tgt.gt_global = std::move(gt_global);
  return tgt;
}

bool target_is_consistent(const WindowTarget& tgt, const PairSpec& spec, double tol) {
  if (static_cast<int>(tgt.gt_global.size()) != spec.K || tgt.gt_pairs.size() != spec.size()) {
    return false;
  }
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const auto [i, j] = spec.pairs[k];
    const Pose expect = ego_motion(tgt.gt_global[i], tgt.gt_global[j]);
    const Pose& got = tgt.gt_pairs[k];
    const double dq = std::min((expect.wxyz() - got.wxyz()).cwiseAbs().maxCoeff(),
                               (expect.wxyz() + got.wxyz()).cwiseAbs().maxCoeff());
    const double dt = (expect.translation() - got.translation()).cwiseAbs().maxCoeff();
    if (dq > tol || dt > tol) return false;
  }
  return true;
}

double pose_mse(const RawPose& pred, const Pose& gt, const LossWeights& w, RawPose* grad) {
  const QuatWxyz raw_q = raw_quaternion(pred);
  // The value is invariant to the hemisphere flip, so only the norm check of
  // canonicalize matters here.
  canonicalize(raw_q);
  const QuatWxyz unit = raw_q / raw_q.norm();
  QuatWxyz target = gt.wxyz();
  if (unit.dot(target) < 0.0) target = -target;

  const Eigen::Vector3d dt = raw_translation(pred) - gt.translation();
  const QuatWxyz dq = unit - target;
  const double value = dt.squaredNorm() + w.beta_rot * dq.squaredNorm();

  if (grad) {
    grad->head<3>() = 2.0 * dt;
    grad->tail<4>() = normalization_jacobian(raw_q).transpose() * (2.0 * w.beta_rot * dq);
  }
  return value;
}

namespace {

void check_pairs(const WindowPrediction& pred, const WindowTarget& tgt, const PairSpec& spec) {
  if (pred.pred_pairs.size() != spec.size() || tgt.gt_pairs.size() != spec.size()) {
    throw ShapeMismatch("pair lists (" + std::to_string(pred.pred_pairs.size()) + " predicted, " +
                        std::to_string(tgt.gt_pairs.size()) + " target) do not match " +
                        std::to_string(spec.size()) + " pairs");
  }
}

void check_globals(const WindowPrediction& pred, const WindowTarget& tgt, const PairSpec& spec) {
  const auto k = static_cast<std::size_t>(spec.K);
  if (pred.pred_global.size() != k || tgt.gt_global.size() != k) {
    throw ShapeMismatch("global lists (" + std::to_string(pred.pred_global.size()) +
                        " predicted, " + std::to_string(tgt.gt_global.size()) +
                        " target) do not match K = " + std::to_string(spec.K));
  }
}

double batch_loss(std::span<const WindowPrediction> preds, std::span<const WindowTarget> targets,
                  const PairSpec& spec, const LossWeights& w, bool with_global,
                  std::vector<WindowGradient>* grads) {
  if (preds.empty()) throw EmptyBatch("loss over an empty batch");
  if (preds.size() != targets.size()) {
    throw ShapeMismatch("batch has " + std::to_string(preds.size()) + " predictions and " +
                        std::to_string(targets.size()) + " targets");
  }
  const double inv_n = 1.0 / static_cast<double>(preds.size());
  if (grads) grads->assign(preds.size(), {});

  double sum = 0.0;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    WindowGradient* g = grads ? &(*grads)[n] : nullptr;
    sum += window_loss(preds[n], targets[n], spec, w, with_global, g).total;
    if (g) {
      for (auto& d : g->d_pairs) d *= inv_n;
      for (auto& d : g->d_global) d *= inv_n;
    }
  }
  return sum * inv_n;
}

}  // namespace

std::vector<double> ctc_residuals(const WindowPrediction& pred, const WindowTarget& tgt,
                                  const PairSpec& spec, const LossWeights& w) {
  check_pairs(pred, tgt, spec);
  std::vector<double> out(spec.size());
  for (std::size_t k = 0; k < spec.size(); ++k) {
    out[k] = pose_mse(pred.pred_pairs[k], tgt.gt_pairs[k], w);
  }
  return out;
}

LossTerms window_loss(const WindowPrediction& pred, const WindowTarget& tgt, const PairSpec& spec,
                      const LossWeights& w, bool with_global, WindowGradient* grad) {
  check_pairs(pred, tgt, spec);
  if (with_global) check_globals(pred, tgt, spec);

  LossTerms terms;
  if (grad) {
    grad->d_pairs.assign(spec.size(), RawPose::Zero());
    grad->d_global.assign(pred.pred_global.size(), RawPose::Zero());
  }
  for (std::size_t k = 0; k < spec.size(); ++k) {
    terms.ctc += pose_mse(pred.pred_pairs[k], tgt.gt_pairs[k], w,
                          grad ? &grad->d_pairs[k] : nullptr);
  }
  if (with_global) {
    for (std::size_t j = 0; j < pred.pred_global.size(); ++j) {
      terms.global += pose_mse(pred.pred_global[j], tgt.gt_global[j], w,
                               grad ? &grad->d_global[j] : nullptr);
    }
    if (grad) {
      for (auto& d : grad->d_global) d *= w.lambda_global;
    }
  }
  terms.total = terms.ctc + w.lambda_global * terms.global;
  return terms;
}

double relative_loss(std::span<const WindowPrediction> preds,
                     std::span<const WindowTarget> targets, const PairSpec& spec,
                     const LossWeights& w, std::vector<WindowGradient>* grads) {
  return batch_loss(preds, targets, spec, w, false, grads);
}

double joint_loss(std::span<const WindowPrediction> preds,
                  std::span<const WindowTarget> targets, const PairSpec& spec,
                  const LossWeights& w, std::vector<WindowGradient>* grads) {
  return batch_loss(preds, targets, spec, w, true, grads);
}

}  // namespace ctcvo
