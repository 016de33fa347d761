#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "ctcvo/errors.hpp"
#include "ctcvo/evaluation.hpp"
#include "oracles.hpp"

namespace ctcvo {
namespace {

namespace fs = std::filesystem;
using namespace ctcvo::testing;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctcvo_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Pose yaw_pose(double yaw_deg, const Eigen::Vector3d& t) {
  const double h = 0.5 * yaw_deg * std::numbers::pi / 180.0;
  return Pose(QuatWxyz(std::cos(h), 0.0, 0.0, std::sin(h)), t);
}

/// Segment errors through 4x4 matrices built from the textbook rotation.
DriftReport matrix_drift(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  auto h = [](const Pose& p) { return oracle_matrix(p); };
  DriftReport rep;
  for (double L : kDriftLengths) {
    double t_sq = 0.0, r_sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      double acc = 0.0;
      std::size_t end = gt.size();
      for (std::size_t j = i + 1; j < gt.size(); ++j) {
        acc += (gt[j].translation() - gt[j - 1].translation()).norm();
        if (acc >= L) {
          end = j;
          break;
        }
      }
      if (end == gt.size()) continue;
      const Eigen::Matrix4d e = (h(pred[i]).inverse() * h(pred[end])).inverse() * (h(gt[i]).inverse() * h(gt[end]));
      const double te = 100.0 * e.topRightCorner<3, 1>().norm() / L;
      const double c = std::clamp((e.topLeftCorner<3, 3>().trace() - 1.0) / 2.0, -1.0, 1.0);
      const double re = 100.0 * std::acos(c) * 180.0 / std::numbers::pi / L;
      t_sq += te * te;
      r_sq += re * re;
      ++count;
    }
    if (count == 0) continue;
    rep.per_length.push_back({L, std::sqrt(t_sq / count), std::sqrt(r_sq / count), count});
  }
  for (const auto& d : rep.per_length) {
    rep.t_rel += d.t_rel / rep.per_length.size();
    rep.r_rel += d.r_rel / rep.per_length.size();
  }
  rep.empty = rep.per_length.empty();
  return rep;
}

// accumulate_trajectory ---------------------------------------------------------

TEST(Accumulate, IdentityTransformsHoldStill) {
  std::mt19937_64 rng(1);
  const Pose start = random_pose(rng);
  const TrajectoryEstimate t = accumulate_trajectory(start, std::vector<Pose>(6, Pose::identity()));
  ASSERT_EQ(t.size(), 7u);
  for (const Pose& p : t.poses) EXPECT_LT(pose_distance(p, start), 1e-12);
  EXPECT_EQ(t.frame_ids.back(), 6u);
  EXPECT_THROW(accumulate_trajectory(start, {}), EmptyBatch);
}

TEST(Accumulate, GroundTruthRelativesReconstructTrajectory) {
  std::mt19937_64 rng(2);
  const std::vector<Pose> gt = random_walk(rng, 150, 2.0);
  std::vector<Pose> rel, ego;
  for (std::size_t i = 0; i + 1 < gt.size(); ++i) {
    rel.push_back(relative(gt[i], gt[i + 1]));
    ego.push_back(ego_motion(gt[i], gt[i + 1]));
  }
  const TrajectoryEstimate a = accumulate_trajectory(gt.front(), rel);
  const TrajectoryEstimate b = integrate_ego_motion(gt.front(), ego);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    EXPECT_LT(pose_distance(a.poses[i], gt[i]), 1e-8) << i;
    EXPECT_LT(pose_distance(b.poses[i], gt[i]), 1e-8) << i;
  }
}

TEST(Accumulate, MatchesMatrixChain) {
  std::mt19937_64 rng(3);
  const Pose start = random_pose(rng);
  std::vector<Pose> tr;
  for (int i = 0; i < 40; ++i) tr.push_back(random_pose(rng, 1.0));
  const TrajectoryEstimate t = accumulate_trajectory(start, tr);
  Eigen::Matrix4d m = oracle_matrix(start);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    m = oracle_matrix(tr[i]) * m;
    EXPECT_LT((oracle_matrix(t.poses[i + 1]) - m).cwiseAbs().maxCoeff(), 1e-9) << i;
  }
}

// median_pose_errors ----------------------------------------------------------

TEST(Median, IdenticalTrajectoriesGiveZero) {
  std::mt19937_64 rng(4);
  const std::vector<Pose> gt = random_walk(rng, 31, 1.0);
  const MedianReport m = median_pose_errors(gt, gt);
  EXPECT_EQ(m.t_med, 0.0);
  EXPECT_NEAR(m.r_med, 0.0, 1e-12);
}

TEST(Median, ReportedAverageFixture) {
  // Every frame displaced by 0.018 m and turned by 2.62 degrees.
  std::mt19937_64 rng(5);
  const std::vector<Pose> gt = random_walk(rng, 40, 0.1);
  std::vector<Pose> pred;
  for (const Pose& g : gt) {
    Eigen::Vector3d dir = random_pose(rng).translation().normalized();
    const double h = 0.5 * 2.62 * std::numbers::pi / 180.0;
    const Eigen::Vector3d axis = random_pose(rng).translation().normalized();
    const Pose turn(QuatWxyz(std::cos(h), std::sin(h) * axis.x(), std::sin(h) * axis.y(), std::sin(h) * axis.z()),
                    Eigen::Vector3d::Zero());
    const Pose rotated = compose(g, turn);
    pred.emplace_back(rotated.rotation(), g.translation() + 0.018 * dir);
  }
  const MedianReport m = median_pose_errors(pred, gt);
  EXPECT_NEAR(m.t_med, 0.018, 1e-12);
  EXPECT_NEAR(m.r_med, 2.62, 1e-9);
}

TEST(Median, MatchesSortOracleExactly) {
  std::mt19937_64 rng(6);
  for (int n : {1, 2, 7, 50, 121, 200}) {
    const std::vector<Pose> gt = random_walk(rng, n, 1.5);
    const std::vector<Pose> pred = perturb(rng, gt, 0.3, 0.05);
    const MedianReport a = median_pose_errors(pred, gt), b = sorted_median_oracle(pred, gt);
    EXPECT_EQ(a.t_med, b.t_med) << n;
    EXPECT_EQ(a.r_med, b.r_med) << n;
  }
}

TEST(Median, EvenCountAveragesMiddlePair) {
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_EQ(median({5.0, 1.0, 3.0}), 3.0);
  EXPECT_THROW(median({}), EmptyBatch);
}

TEST(Median, LengthMismatchIsAnError) {
  std::mt19937_64 rng(7);
  const std::vector<Pose> gt = random_walk(rng, 5, 1.0);
  EXPECT_THROW(median_pose_errors(std::vector<Pose>(gt.begin(), gt.end() - 1), gt), LengthMismatch);
  EXPECT_THROW(kitti_drift(std::vector<Pose>(gt.begin(), gt.end() - 1), gt), LengthMismatch);
}

// kitti_drift -------------------------------------------------------------------

TEST(Drift, IdenticalTrajectoriesGiveZero) {
  std::mt19937_64 rng(8);
  const std::vector<Pose> gt = random_walk(rng, 200, 5.0);
  const DriftReport d = kitti_drift(gt, gt);
  ASSERT_FALSE(d.empty);
  EXPECT_NEAR(d.t_rel, 0.0, 1e-12);
  EXPECT_NEAR(d.r_rel, 0.0, 1e-12);
}

TEST(Drift, ScaleDriftFixtureIsOnePercentAtEveryLength) {
  std::vector<Pose> gt, pred;
  for (int i = 0; i < 1000; ++i) {
    gt.push_back(yaw_pose(0.0, Eigen::Vector3d(i, 0.0, 0.0)));
    pred.push_back(yaw_pose(0.0, Eigen::Vector3d(1.01 * i, 0.0, 0.0)));
  }
  const DriftReport d = kitti_drift(pred, gt);
  ASSERT_EQ(d.per_length.size(), 8u);
  for (std::size_t l = 0; l < 8; ++l) {
    EXPECT_EQ(d.per_length[l].length, kDriftLengths[l]);
    EXPECT_NEAR(d.per_length[l].t_rel, 1.0, 1e-9);
    EXPECT_EQ(d.per_length[l].r_rel, 0.0);
    EXPECT_EQ(d.per_length[l].segments, 1000u - static_cast<std::size_t>(kDriftLengths[l]));
  }
  EXPECT_NEAR(d.t_rel, 1.0, 1e-9);
}

TEST(Drift, MatchesNaiveDoubleLoopExactly) {
  std::mt19937_64 rng(9);
  for (int n : {60, 120, 200}) {
    const std::vector<Pose> gt = random_walk(rng, n, 6.0);
    const std::vector<Pose> pred = perturb(rng, gt, 0.5, 0.01);
    const DriftReport a = kitti_drift(pred, gt), b = naive_drift(pred, gt);
    ASSERT_FALSE(a.empty);
    ASSERT_EQ(a.per_length.size(), b.per_length.size());
    for (std::size_t l = 0; l < a.per_length.size(); ++l) {
      EXPECT_EQ(a.per_length[l].t_rel, b.per_length[l].t_rel);
      EXPECT_EQ(a.per_length[l].r_rel, b.per_length[l].r_rel);
      EXPECT_EQ(a.per_length[l].segments, b.per_length[l].segments);
    }
    EXPECT_EQ(a.t_rel, b.t_rel);
    EXPECT_EQ(a.r_rel, b.r_rel);
  }
}

TEST(Drift, AgreesWithMatrixOracle) {
  std::mt19937_64 rng(10);
  const std::vector<Pose> gt = random_walk(rng, 200, 6.0);
  const std::vector<Pose> pred = perturb(rng, gt, 0.5, 0.01);
  const DriftReport a = kitti_drift(pred, gt), b = matrix_drift(pred, gt);
  ASSERT_EQ(a.per_length.size(), b.per_length.size());
  EXPECT_NEAR(a.t_rel, b.t_rel, 1e-9 * b.t_rel);
  EXPECT_NEAR(a.r_rel, b.r_rel, 1e-6 * b.r_rel);
}

TEST(Drift, RigidMotionOfBothTrajectoriesChangesNothing) {
  std::mt19937_64 rng(11);
  const std::vector<Pose> gt = random_walk(rng, 180, 6.0);
  const std::vector<Pose> pred = perturb(rng, gt, 0.5, 0.02);
  const Pose g = random_pose(rng, 100.0);
  std::vector<Pose> gt2, pred2;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt2.push_back(compose(g, gt[i]));
    pred2.push_back(compose(g, pred[i]));
  }
  const DriftReport a = kitti_drift(pred, gt), b = kitti_drift(pred2, gt2);
  EXPECT_NEAR(a.t_rel, b.t_rel, 1e-6);
  EXPECT_NEAR(a.r_rel, b.r_rel, 1e-6);
  const MedianReport c = median_pose_errors(pred, gt), d = median_pose_errors(pred2, gt2);
  EXPECT_NEAR(c.t_med, d.t_med, 1e-6);
  EXPECT_NEAR(c.r_med, d.r_med, 1e-6);
}

TEST(Drift, ShortTrajectoryIsFlaggedEmpty) {
  std::mt19937_64 rng(12);
  const std::vector<Pose> gt = random_walk(rng, 20, 1.0);
  const DriftReport d = kitti_drift(gt, gt);
  EXPECT_TRUE(d.empty);
  EXPECT_TRUE(d.per_length.empty());
}

TEST(Drift, FeasibleLengthsOnly) {
  std::vector<Pose> gt;
  for (int i = 0; i <= 350; ++i) gt.push_back(yaw_pose(0.0, Eigen::Vector3d(i, 0.0, 0.0)));
  const DriftReport d = kitti_drift(gt, gt);
  ASSERT_EQ(d.per_length.size(), 3u);
  EXPECT_EQ(d.per_length.back().length, 300.0);
  EXPECT_EQ(d.per_length.back().segments, 51u);
}

TEST(Drift, TableLayoutFixture) {
  DriftReport a, b;
  a.empty = b.empty = false;
  a.t_rel = 1.50;
  a.r_rel = 1.40;
  b.t_rel = 1.84;
  b.r_rel = 1.68;
  const std::string table = format_drift_table({{"03", a}, {"04", b}});
  EXPECT_NE(table.find("Average"), std::string::npos);
  EXPECT_NE(table.find("1.67"), std::string::npos) << table;
  EXPECT_NE(table.find("1.54"), std::string::npos) << table;
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
}

// Plot data -----------------------------------------------------------------------

TEST(PlotData, RowsRoundTripAndSidecarMatchesDrift) {
  const fs::path dir = scratch("plot");
  std::vector<Pose> gt, pred;
  for (int i = 0; i < 300; ++i) {
    gt.push_back(yaw_pose(0.0, Eigen::Vector3d(i, 0.0, 0.0)));
    pred.push_back(yaw_pose(0.0, Eigen::Vector3d(1.01 * i, 1e-3 * i, 0.0)));
  }
  TrajectoryEstimate est;
  est.poses = pred;
  for (int i = 0; i < 300; ++i) est.frame_ids.push_back(i);
  const std::string path = (dir / "traj.txt").string();
  emit_plot_data(est, gt, path);

  std::ifstream in(path);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 301u);

  const std::vector<PlotRow> rows = read_plot_data(path);
  ASSERT_EQ(rows.size(), 300u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].frame, i);
    EXPECT_LT((rows[i].pred - pred[i].translation()).norm(), 1e-9);
    EXPECT_LT((rows[i].gt - gt[i].translation()).norm(), 1e-9);
  }
  const DriftReport d = kitti_drift(pred, gt);
  bool found = false;
  for (const auto& [k, v] : read_key_values(path + ".metrics"))
    if (k == "t_rel_percent") {
      EXPECT_EQ(std::stod(v), d.t_rel);
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(PlotData, AlignmentOnlyMovesPlottedCoordinates) {
  const fs::path dir = scratch("align");
  std::mt19937_64 rng(13);
  const std::vector<Pose> gt = random_walk(rng, 50, 2.0);
  const Pose g = random_pose(rng, 20.0);
  TrajectoryEstimate est;
  for (const Pose& p : gt) est.poses.push_back(compose(g, p));
  const std::string path = (dir / "aligned.txt").string();
  emit_plot_data(est, gt, path, true);
  for (const PlotRow& r : read_plot_data(path)) EXPECT_LT((r.pred - r.gt).norm(), 1e-6);
  EXPECT_THROW(emit_plot_data(est, gt, (dir / "missing" / "x.txt").string()), IoError);
}

// Model-driven trajectories and the ablation harness ----------------------------------

SequenceRecord small_sequence(int n) {
  SynthParams p;
  p.n_frames = n;
  p.image_height = p.image_width = 32;
  p.seed = 4;
  return synth_sequence(p, "eval");
}

ModelConfig small_model(int K) {
  ModelConfig c = ModelConfig::tiny();
  c.K = K;
  c.image_height = c.image_width = 32;
  return c;
}

TEST(PredictTrajectory, CoversEveryFrameInEachMode) {
  const SequenceRecord seq = small_sequence(14);
  const VoModel model(small_model(4));
  for (Mode m : {Mode::Fused, Mode::RelativeOnly, Mode::GlobalOnly}) {
    const TrajectoryEstimate t = predict_trajectory(model, seq, m);
    ASSERT_EQ(t.size(), seq.size()) << to_string(m);
    EXPECT_EQ(t.mode, m);
    EXPECT_EQ(t.frame_ids.back(), seq.size() - 1);
  }
  const TrajectoryEstimate rel = predict_trajectory(model, seq, Mode::RelativeOnly);
  EXPECT_LT(pose_distance(rel.poses.front(), seq.gt.front()), 1e-12);
  EXPECT_THROW(predict_trajectory(model, small_sequence(3), Mode::Fused), SequenceTooShort);
}

TEST(PredictTrajectory, RelativeModeIntegratesWindowPredictions) {
  const SequenceRecord seq = small_sequence(7);
  const VoModel model(small_model(4));
  const TrajectoryEstimate t = predict_trajectory(model, seq, Mode::RelativeOnly);
  const std::vector<Image> frames = load_frames(seq, 32, 32);
  // windows start at 0 and 3; frame 6 is the last frame of the second
  std::vector<Pose> ego;
  for (std::size_t s : {0u, 3u}) {
    Graph g(model.params());
    ForwardOptions o;
    o.mode = Mode::RelativeOnly;
    const WindowOutput out = model.forward(g, std::span<const Image>(frames.data() + s, 4), o);
    for (const auto& a : out.adjacent) ego.push_back(from_raw(a.value().row(0).transpose()));
  }
  const TrajectoryEstimate ref = integrate_ego_motion(seq.gt.front(), ego);
  for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_LT(pose_distance(t.poses[i], ref.poses[i]), 1e-12);
}

TEST(Ablation, OneVariantGivesOneRow) {
  AblationSetup s;
  s.model = small_model(3);
  s.train.epochs = 1;
  s.train.batch_size = 4;
  s.train.calibration_frames = 8;
  s.train_data = small_sequence(12);
  s.test_data = small_sequence(10);
  s.work_dir = scratch("ablation").string();
  const std::vector<AblationRow> rows = ablation_sweep({{Mode::GlobalOnly, 3}}, s);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].variant.mode, Mode::GlobalOnly);
  EXPECT_TRUE(rows[0].drift.empty);
  EXPECT_GT(rows[0].final_loss, 0.0);
  const std::string table = format_ablation_table(rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 2);
  EXPECT_TRUE(fs::exists(fs::path(s.work_dir) / "global_only_K3" / "registry" / "ablation.scene"));
}

}  // namespace
}  // namespace ctcvo
