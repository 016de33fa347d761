#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ctcvo/dataset.hpp"
#include "ctcvo/errors.hpp"
#include "test_util.hpp"

namespace ctcvo {
namespace {

namespace fs = std::filesystem;
using namespace ctcvo::testing;

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ctcvo_dataset_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthParams small_params() {
  SynthParams p;
  p.n_frames = 12;
  p.image_height = p.image_width = 32;
  return p;
}

double correlation(const Image& a, const Image& b) {
  const Eigen::Map<const Eigen::VectorXf> x(a.data.data(), a.data.size()), y(b.data.data(), b.data.size());
  const Eigen::VectorXd xc = (x.cast<double>().array() - x.cast<double>().mean()).matrix();
  const Eigen::VectorXd yc = (y.cast<double>().array() - y.cast<double>().mean()).matrix();
  return xc.dot(yc) / (xc.norm() * yc.norm());
}

TEST(KittiLoader, IdentityFirstLine) {
  const fs::path dir = temp_dir("kitti_identity");
  std::ofstream(dir / "poses.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n"
                                   << "1 0 0 1.5 0 1 0 0 0 0 1 2\n";
  const auto poses = read_kitti_poses((dir / "poses.txt").string());
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_LT(pose_distance(poses[0], Pose::identity()), 1e-15);
  EXPECT_LT((poses[1].translation() - Eigen::Vector3d(1.5, 0, 2)).norm(), 1e-15);
}

TEST(KittiLoader, RejectsWrongTokenCount) {
  const fs::path dir = temp_dir("kitti_tokens");
  std::ofstream(dir / "poses.txt") << "1 0 0 0 0 1 0 0 0 0 1\n";
  EXPECT_THROW(read_kitti_poses((dir / "poses.txt").string()), PoseParseError);
  std::ofstream(dir / "bad.txt") << "1 0 0 0 0 1 0 0 0 0 1 x\n";
  EXPECT_THROW(read_kitti_poses((dir / "bad.txt").string()), PoseParseError);
}

TEST(KittiLoader, RejectsNonRotation) {
  const fs::path dir = temp_dir("kitti_rotation");
  std::ofstream(dir / "poses.txt") << "2 0 0 0 0 1 0 0 0 0 1 0\n";
  EXPECT_THROW(read_kitti_poses((dir / "poses.txt").string()), NotARotation);
}

TEST(KittiLoader, MissingFiles) {
  const fs::path dir = temp_dir("kitti_missing");
  EXPECT_THROW(load_kitti_sequence(dir.string(), "00"), MissingFile);
  EXPECT_THROW(read_kitti_poses((dir / "nope.txt").string()), MissingFile);
}

TEST(KittiLoader, SequenceRoundTrip) {
  const fs::path dir = temp_dir("kitti_roundtrip");
  SynthParams p = small_params();
  p.yaw_rate_min = 5.0;
  const SequenceRecord seq = synth_sequence(p, "07");
  write_kitti_sequence(dir.string(), seq);
  const SequenceRecord loaded = load_kitti_sequence(dir.string(), "07");
  ASSERT_EQ(loaded.size(), seq.size());
  EXPECT_EQ(loaded.source, Source::Kitti);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    EXPECT_LT((to_homogeneous(loaded.gt[i]) - to_homogeneous(seq.gt[i])).cwiseAbs().maxCoeff(), 1e-9);
    const Image img = loaded.image(i, 32, 32);
    // 8-bit quantization.
    for (std::size_t k = 0; k < img.data.size(); ++k) ASSERT_NEAR(img.data[k], seq.frames[i].image->data[k], 0.5 / 255 + 1e-6);
  }
  fs::remove(dir / "sequences" / "07" / "image_2" / "000003.png");
  EXPECT_THROW(load_kitti_sequence(dir.string(), "07"), LengthMismatch);
}

TEST(SevenScenesLoader, IdentityAndRoundTrip) {
  const fs::path dir = temp_dir("7scenes");
  const fs::path seq_dir = dir / "chess" / "seq-01";
  fs::create_directories(seq_dir);
  std::ofstream(seq_dir / "frame-000000.pose.txt") << "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n";
  EXPECT_LT(pose_distance(read_sevenscenes_pose((seq_dir / "frame-000000.pose.txt").string()), Pose::identity()),
            1e-15);

  std::mt19937_64 rng(3);
  std::vector<Pose> poses;
  Image img(24, 32);
  for (int i = 0; i < 4; ++i) {
    poses.push_back(random_pose(rng));
    char name[64];
    std::snprintf(name, sizeof name, "frame-%06d", i);
    write_sevenscenes_pose((seq_dir / (std::string(name) + ".pose.txt")).string(), poses.back());
    save_image(img, (seq_dir / (std::string(name) + ".color.png")).string());
  }
  const SequenceRecord rec = load_sevenscenes_sequence(dir.string(), "chess", "01");
  ASSERT_EQ(rec.size(), 4u);
  for (int i = 0; i < 4; ++i)
    EXPECT_LT((to_homogeneous(rec.gt[i]) - to_homogeneous(poses[i])).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(rec.image(0, 12, 16).width, 16);

  fs::remove(seq_dir / "frame-000002.color.png");
  EXPECT_THROW(load_sevenscenes_sequence(dir.string(), "chess", "01"), LengthMismatch);
  EXPECT_THROW(load_sevenscenes_sequence(dir.string(), "chess", "02"), MissingFile);
}

TEST(SevenScenesLoader, ParseErrors) {
  const fs::path dir = temp_dir("7scenes_parse");
  std::ofstream(dir / "short.txt") << "1 0 0 0\n0 1 0 0\n0 0 1 0\n";
  EXPECT_THROW(read_sevenscenes_pose((dir / "short.txt").string()), PoseParseError);
  std::ofstream(dir / "bottom.txt") << "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n";
  EXPECT_THROW(read_sevenscenes_pose((dir / "bottom.txt").string()), PoseParseError);
}

TEST(Synth, ZeroMotionGivesIdenticalFramesAndPoses) {
  SynthParams p = small_params();
  p.speed_min = p.speed_max = 0.0;
  p.yaw_rate_min = p.yaw_rate_max = 0.0;
  const SequenceRecord seq = synth_sequence(p);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    EXPECT_EQ(seq.gt[i].translation(), seq.gt[0].translation());
    EXPECT_EQ(seq.gt[i].wxyz(), seq.gt[0].wxyz());
    EXPECT_EQ(*seq.frames[i].image, *seq.frames[0].image);
  }
}

TEST(Synth, ConstantSpeedStepLength) {
  SynthParams p = small_params();
  p.n_frames = 40;
  p.speed_min = p.speed_max = 22.0;
  p.yaw_rate_min = p.yaw_rate_max = 0.0;
  const SequenceRecord seq = synth_sequence(p);
  for (std::size_t i = 1; i < seq.size(); ++i)
    EXPECT_NEAR((seq.gt[i].translation() - seq.gt[i - 1].translation()).norm(), 22.0 / p.fps, 1e-12);
  EXPECT_LT(rotation_angle_deg(seq.gt.front(), seq.gt.back()), 1e-9);
}

TEST(Synth, ConstantYawRateHeadingChange) {
  SynthParams p = small_params();
  p.n_frames = 30;
  p.yaw_rate_min = p.yaw_rate_max = 20.0;
  p.segment_min = p.segment_max = 100;
  const SequenceRecord seq = synth_sequence(p);
  const double expected = (p.n_frames - 1) * 20.0 / p.fps;
  EXPECT_NEAR(rotation_angle_deg(seq.gt.front(), seq.gt.back()), expected, 1e-9);
}

TEST(Synth, DeterministicPerSeed) {
  const SynthParams p = small_params();
  const SequenceRecord a = synth_sequence(p), b = synth_sequence(p);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(*a.frames[i].image, *b.frames[i].image);
    EXPECT_EQ(to_raw(a.gt[i]), to_raw(b.gt[i]));
  }
  SynthParams q = p;
  q.seed = 2;
  const SequenceRecord c = synth_sequence(q);
  EXPECT_NE(*a.frames[0].image, *c.frames[0].image);
  EXPECT_NE(to_raw(a.gt.back()), to_raw(c.gt.back()));
}

TEST(Synth, ConsecutiveFramesAreCorrelated) {
  SynthParams p = small_params();
  p.n_frames = 60;
  const SequenceRecord seq = synth_sequence(p);
  double near = 0.0, far = 0.0;
  for (int i = 0; i < 10; ++i) {
    near += correlation(*seq.frames[i].image, *seq.frames[i + 1].image);
    far += correlation(*seq.frames[i].image, *seq.frames[i + 40].image);
  }
  EXPECT_GT(near / 10, 0.5);
  EXPECT_GT(near, far + 1.0);
}

TEST(Synth, RejectsInvalidParameters) {
  SynthParams p = small_params();
  p.speed_min = -1.0;
  EXPECT_THROW(synth_sequence(p), ConfigError);
  p = small_params();
  p.yaw_rate_max = -3.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Manifest, RoundTripAndUnknownKeys) {
  const fs::path dir = temp_dir("manifest");
  SynthParams p = small_params();
  p.seed = 123456789012345ULL;
  p.speed_min = 1.0 / 3.0;
  write_manifest((dir / "manifest.txt").string(), p, "seq-a");
  std::string id;
  EXPECT_EQ(read_manifest((dir / "manifest.txt").string(), &id), p);
  EXPECT_EQ(id, "seq-a");
  std::ofstream(dir / "manifest.txt", std::ios::app) << "colour=blue\n";
  EXPECT_THROW(read_manifest((dir / "manifest.txt").string()), ConfigError);
}

TEST(WindowIter, CountFormula) {
  SynthParams p = small_params();
  p.n_frames = 10;
  const SequenceRecord seq = synth_sequence(p);
  const PairSpec spec = make_pair_spec(5);
  EXPECT_EQ(window_iter(seq, 5, 1, spec).size(), 6u);
  EXPECT_EQ(window_iter(seq, 5, 4, spec).size(), 2u);
  EXPECT_EQ(window_iter(seq, 5, 5, spec).size(), 2u);
  EXPECT_EQ(window_iter(slice(seq, 0, 5), 5, 1, spec).size(), 1u);
  EXPECT_THROW(window_iter(slice(seq, 0, 4), 5, 1, spec), SequenceTooShort);
  EXPECT_THROW(window_iter(seq, 5, 0, spec), ConfigError);

  std::size_t n = 0;
  for (const WindowSample& w : window_iter(seq, 5, 2, spec)) {
    EXPECT_EQ(w.start, 2 * n);
    EXPECT_EQ(w.indices.front(), w.start);
    EXPECT_EQ(w.indices.back(), w.start + 4);
    ++n;
  }
  EXPECT_EQ(n, 3u);
}

TEST(WindowIter, TargetsAreChainConsistent) {
  SynthParams p = small_params();
  p.n_frames = 20;
  p.yaw_rate_min = 5.0;
  const SequenceRecord seq = synth_sequence(p);
  const PairSpec spec = make_pair_spec(5);
  for (const WindowSample& w : window_iter(seq, 5, 1, spec)) {
    ASSERT_EQ(w.target.gt_pairs.size(), 7u);
    for (std::size_t k = 0; k < spec.size(); ++k) {
      const auto [i, j] = spec.pairs[k];
      // Matrix oracle: camera-frame motion inv(P_j) * P_i.
      const Eigen::Matrix4d expected =
          oracle_matrix(seq.gt[w.start + j]).inverse() * oracle_matrix(seq.gt[w.start + i]);
      EXPECT_LT((oracle_matrix(w.target.gt_pairs[k]) - expected).cwiseAbs().maxCoeff(), 1e-9);
    }
    // (0,1) then (1,2) composes to (0,2), and so on up the dyadic tree.
    EXPECT_LT(pose_distance(compose(w.target.gt_pairs[1], w.target.gt_pairs[0]), w.target.gt_pairs[4]), 1e-9);
    EXPECT_LT(pose_distance(compose(w.target.gt_pairs[5], w.target.gt_pairs[4]), w.target.gt_pairs[6]), 1e-9);
    EXPECT_TRUE(target_is_consistent(w.target, spec));
  }
}

}  // namespace
}  // namespace ctcvo
