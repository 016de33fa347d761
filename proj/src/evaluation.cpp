#include "ctcvo/evaluation.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ctcvo/errors.hpp"
#include "ctcvo/raw_pose.hpp"

namespace ctcvo {

namespace fs = std::filesystem;

TrajectoryEstimate accumulate_trajectory(const Pose& start, const std::vector<Pose>& transforms) {
  if (transforms.empty()) throw EmptyBatch("no transforms to accumulate");
  TrajectoryEstimate out;
  out.poses.reserve(transforms.size() + 1);
  out.poses.push_back(start);
  for (const Pose& t : transforms) out.poses.push_back(compose(t, out.poses.back()));
  for (std::size_t i = 0; i < out.poses.size(); ++i) out.frame_ids.push_back(i);
  return out;
}

TrajectoryEstimate integrate_ego_motion(const Pose& start, const std::vector<Pose>& ego) {
  // World-to-camera forms chain as inv(P_i+1) = compose(ego_i, inv(P_i)).
  TrajectoryEstimate out = accumulate_trajectory(inverse(start), ego);
  for (Pose& p : out.poses) p = inverse(p);
  out.mode = Mode::RelativeOnly;
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw EmptyBatch("median of no values");
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lower + upper) / 2.0;
}

namespace {

void check_lengths(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  if (pred.size() != gt.size())
    throw LengthMismatch(std::to_string(pred.size()) + " predicted poses against " + std::to_string(gt.size()) +
                         " ground-truth poses");
}

}  // namespace

MedianReport median_pose_errors(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  check_lengths(pred, gt);
  if (pred.empty()) throw EmptyBatch("no poses to compare");
  std::vector<double> t(pred.size()), r(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    t[i] = (pred[i].translation() - gt[i].translation()).norm();
    r[i] = rotation_angle_deg(pred[i], gt[i]);
  }
  return {median(std::move(t)), median(std::move(r))};
}

std::vector<double> path_distances(const std::vector<Pose>& gt) {
  std::vector<double> d(gt.size(), 0.0);
  for (std::size_t i = 1; i < gt.size(); ++i) d[i] = d[i - 1] + (gt[i].translation() - gt[i - 1].translation()).norm();
  return d;
}

DriftReport kitti_drift(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                        const std::array<double, 8>& lengths) {
  check_lengths(pred, gt);
  DriftReport report;
  const std::vector<double> dist = path_distances(gt);
  const std::size_t n = gt.size();
  std::vector<double> t_sq(lengths.size(), 0.0), r_sq(lengths.size(), 0.0);
  std::vector<std::size_t> count(lengths.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i;
    for (std::size_t l = 0; l < lengths.size(); ++l) {
      const double L = lengths[l];
      // Lengths ascend, so the end frame search resumes where the last stopped.
      while (j < n && dist[j] - dist[i] < L) ++j;
      if (j >= n) break;
      const Pose gt_seg = compose(inverse(gt[i]), gt[j]);
      const Pose pred_seg = compose(inverse(pred[i]), pred[j]);
      const Pose err = compose(inverse(pred_seg), gt_seg);
      const double t_err = 100.0 * err.translation().norm() / L;
      const double r_err = 100.0 * rotation_angle_deg(pred_seg, gt_seg) / L;
      t_sq[l] += t_err * t_err;
      r_sq[l] += r_err * r_err;
      ++count[l];
    }
  }
  for (std::size_t l = 0; l < lengths.size(); ++l) {
    if (count[l] == 0) continue;
    const double c = static_cast<double>(count[l]);
    report.per_length.push_back({lengths[l], std::sqrt(t_sq[l] / c), std::sqrt(r_sq[l] / c), count[l]});
  }
  if (report.per_length.empty()) return report;
  report.empty = false;
  for (const LengthDrift& d : report.per_length) {
    report.t_rel += d.t_rel;
    report.r_rel += d.r_rel;
  }
  report.t_rel /= static_cast<double>(report.per_length.size());
  report.r_rel /= static_cast<double>(report.per_length.size());
  return report;
}

namespace {

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

std::string format_report(const DriftReport& drift, const MedianReport& med) {
  std::ostringstream s;
  s << "drift_empty=" << (drift.empty ? 1 : 0) << '\n';
  s << "t_rel_percent=" << num(drift.t_rel) << '\n';
  s << "r_rel_deg_per_100m=" << num(drift.r_rel) << '\n';
  for (const LengthDrift& d : drift.per_length) {
    const std::string key = std::to_string(static_cast<int>(d.length));
    s << "t_rel_" << key << "=" << num(d.t_rel) << '\n';
    s << "r_rel_" << key << "=" << num(d.r_rel) << '\n';
    s << "segments_" << key << "=" << d.segments << '\n';
  }
  s << "t_med_m=" << num(med.t_med) << '\n';
  s << "r_med_deg=" << num(med.r_med) << '\n';
  return s.str();
}

std::string format_drift_table(const std::vector<std::pair<std::string, DriftReport>>& rows) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << std::left << std::setw(12) << "sequence" << std::right << std::setw(10) << "t_rel(%)" << std::setw(14)
    << "r_rel(deg/100m)" << '\n';
  double t = 0.0, r = 0.0;
  std::size_t n = 0;
  for (const auto& [name, d] : rows) {
    s << std::left << std::setw(12) << name << std::right;
    if (d.empty) {
      s << std::setw(10) << "n/a" << std::setw(14) << "n/a" << '\n';
      continue;
    }
    s << std::setw(10) << d.t_rel << std::setw(14) << d.r_rel << '\n';
    t += d.t_rel;
    r += d.r_rel;
    ++n;
  }
  s << std::left << std::setw(12) << "Average" << std::right;
  if (n == 0)
    s << std::setw(10) << "n/a" << std::setw(14) << "n/a" << '\n';
  else
    s << std::setw(10) << t / static_cast<double>(n) << std::setw(14) << r / static_cast<double>(n) << '\n';
  return s.str();
}

TrajectoryEstimate predict_trajectory(const VoModel& model, const SequenceRecord& seq, Mode mode) {
  const ModelConfig& mc = model.config();
  const std::size_t K = static_cast<std::size_t>(mc.K);
  const std::size_t n = seq.size();
  if (n < K) throw SequenceTooShort(seq.id + " has " + std::to_string(n) + " frames, window needs " + std::to_string(K));
  if (seq.gt.size() != n) throw LengthMismatch(seq.id + ": frame and pose counts differ");
  const std::vector<Image> frames = load_frames(seq, mc.image_height, mc.image_width);

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + K <= n; s += K - 1) starts.push_back(s);
  if (starts.back() + K < n) starts.push_back(n - K);

  ForwardOptions opt;
  opt.mode = mode;
  std::vector<std::optional<Pose>> per_frame(mode == Mode::RelativeOnly ? n - 1 : n);
  for (std::size_t s : starts) {
    Graph g(model.params());
    const WindowOutput out = model.forward(g, std::span<const Image>(frames.data() + s, K), opt);
    const std::vector<ad::Var>& src = mode == Mode::RelativeOnly ? out.adjacent : out.global;
    for (std::size_t m = 0; m < src.size(); ++m) {
      std::optional<Pose>& slot = per_frame[s + m];
      if (!slot) slot = from_raw(src[m].value().row(0).transpose());
    }
  }
  std::vector<Pose> poses;
  poses.reserve(per_frame.size());
  for (const auto& p : per_frame) poses.push_back(*p);

  TrajectoryEstimate est;
  if (mode == Mode::RelativeOnly) {
    est = integrate_ego_motion(seq.gt.front(), poses);
  } else {
    est.poses = std::move(poses);
    for (std::size_t i = 0; i < n; ++i) est.frame_ids.push_back(i);
  }
  est.mode = mode;
  return est;
}

void emit_plot_data(const TrajectoryEstimate& pred, const std::vector<Pose>& gt, const std::string& path, bool align) {
  check_lengths(pred.poses, gt);
  if (pred.poses.empty()) throw EmptyBatch("no poses to plot");
  const std::size_t n = gt.size();
  Eigen::Matrix3Xd p(3, n), g(3, n);
  for (std::size_t i = 0; i < n; ++i) {
    p.col(static_cast<Eigen::Index>(i)) = pred.poses[i].translation();
    g.col(static_cast<Eigen::Index>(i)) = gt[i].translation();
  }
  if (align && n >= 3) {
    const Eigen::Matrix4d T = Eigen::umeyama(p, g, false);
    p = (T.topLeftCorner<3, 3>() * p).colwise() + T.topRightCorner<3, 1>();
  }
  {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "frame pred_x pred_y pred_z gt_x gt_y gt_z\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      const std::size_t id = i < pred.frame_ids.size() ? pred.frame_ids[i] : i;
      out << id << ' ' << p(0, c) << ' ' << p(1, c) << ' ' << p(2, c) << ' ' << g(0, c) << ' ' << g(1, c) << ' '
          << g(2, c) << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
  }
  std::ofstream side(path + ".metrics");
  if (!side) throw IoError("cannot write " + path + ".metrics");
  side << "mode=" << to_string(pred.mode) << '\n';
  side << "frames=" << n << '\n';
  side << "aligned=" << (align ? 1 : 0) << '\n';
  side << format_report(kitti_drift(pred.poses, gt), median_pose_errors(pred.poses, gt));
  if (!side) throw IoError("write failed: " + path + ".metrics");
}

std::vector<PlotRow> read_plot_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("frame ", 0) != 0) throw IoError(path + ": missing header");
  std::vector<PlotRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream s(line);
    PlotRow r;
    if (!(s >> r.frame >> r.pred.x() >> r.pred.y() >> r.pred.z() >> r.gt.x() >> r.gt.y() >> r.gt.z()))
      throw IoError(path + ": malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#') continue;
    if (eq == std::string::npos) throw ConfigError(path + ": expected key=value, got '" + line + "'");
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

std::vector<AblationRow> ablation_sweep(const std::vector<Variant>& variants, const AblationSetup& setup) {
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig mc = setup.model;
    mc.K = v.K;
    const fs::path dir = fs::path(setup.work_dir) / (to_string(v.mode) + "_K" + std::to_string(v.K));
    fs::create_directories(dir);

    TrainConfig tc = setup.train;
    tc.resume_checkpoint.clear();
    tc.stop_after = -1;
    tc.scene_id = tc.scene_id.empty() ? "ablation" : tc.scene_id;
    tc.registry_dir = (dir / "registry").string();
    tc.overwrite_scene = true;
    tc.log_path = (dir / "train.log").string();

    tc.output_checkpoint = (dir / "relative.ckpt").string();
    StageResult r = pretrain_relative(tc, mc, setup.train_data);
    if (v.mode != Mode::RelativeOnly) {
      tc.base_checkpoint = tc.output_checkpoint;
      tc.output_checkpoint = (dir / "global.ckpt").string();
      r = pretrain_global(tc, mc, setup.train_data);
      if (v.mode == Mode::Fused) {
        tc.output_checkpoint = (dir / "fused.ckpt").string();
        r = finetune_end_to_end(tc, mc, setup.train_data);
      }
    }
    const TrajectoryEstimate est = predict_trajectory(r.model, setup.test_data, v.mode);
    AblationRow row;
    row.variant = v;
    row.drift = kitti_drift(est.poses, setup.test_data.gt);
    row.median = median_pose_errors(est.poses, setup.test_data.gt);
    row.final_loss = r.state.history.empty() ? 0.0 : r.state.history.back().loss;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(14) << "mode" << std::right << std::setw(4) << "K" << std::setw(12) << "t_rel(%)"
    << std::setw(17) << "r_rel(deg/100m)" << std::setw(10) << "t_med(m)" << std::setw(12) << "r_med(deg)"
    << std::setw(13) << "final_loss" << std::setw(10) << "time(s)" << '\n';
  s << std::fixed;
  for (const AblationRow& r : rows) {
    s << std::left << std::setw(14) << to_string(r.variant.mode) << std::right << std::setw(4) << r.variant.K
      << std::setprecision(3);
    if (r.drift.empty)
      s << std::setw(12) << "n/a" << std::setw(17) << "n/a";
    else
      s << std::setw(12) << r.drift.t_rel << std::setw(17) << r.drift.r_rel;
    s << std::setw(10) << r.median.t_med << std::setw(12) << r.median.r_med << std::setw(13) << std::setprecision(5)
      << r.final_loss << std::setw(10) << std::setprecision(1) << r.seconds << '\n';
  }
  return s.str();
}

}  // namespace ctcvo
