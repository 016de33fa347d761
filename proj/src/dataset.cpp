#include "ctcvo/dataset.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "ctcvo/errors.hpp"

namespace ctcvo {

namespace fs = std::filesystem;

std::string to_string(Source s) {
  switch (s) {
    case Source::Kitti: return "kitti";
    case Source::SevenScenes: return "sevenscenes";
    case Source::Synthetic: return "synthetic";
  }
  return "synthetic";
}

Image SequenceRecord::image(std::size_t i, int height, int width) const {
  if (i >= frames.size()) throw ShapeMismatch("frame index " + std::to_string(i) + " out of range");
  const FrameRef& f = frames[i];
  if (f.image) return resize_image(*f.image, height, width);
  return resize_image(load_image(f.path), height, width);
}

std::vector<Image> load_frames(const SequenceRecord& seq, int height, int width) {
  std::vector<Image> out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) out.push_back(seq.image(i, height, width));
  return out;
}

// Pose files ------------------------------------------------------------------

namespace {

std::vector<double> parse_numbers(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw PoseParseError(where + ": not a number '" + tok + "'");
    }
  }
  return v;
}

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::vector<std::string> sorted_files(const fs::path& dir, const std::string& suffix) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() >= suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<Pose> read_kitti_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::vector<Pose> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    const std::vector<double> v = parse_numbers(line, where);
    if (v.empty()) continue;
    if (v.size() != 12) throw PoseParseError(where + ": expected 12 numbers, got " + std::to_string(v.size()));
    PoseMatrix m;
    for (int i = 0; i < 12; ++i) m(i / 4, i % 4) = v[i];
    poses.push_back(from_matrix(m));
  }
  return poses;
}

void write_kitti_poses(const std::string& path, const std::vector<Pose>& poses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Pose& p : poses) {
    const PoseMatrix m = to_matrix(p);
    for (int i = 0; i < 12; ++i) out << (i ? " " : "") << format_number(m(i / 4, i % 4));
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

SequenceRecord load_kitti_sequence(const std::string& root, const std::string& seq) {
  const fs::path pose_file = fs::path(root) / "poses" / (seq + ".txt");
  const fs::path image_dir = fs::path(root) / "sequences" / seq / "image_2";
  if (!fs::exists(pose_file)) throw MissingFile(pose_file.string());
  if (!fs::is_directory(image_dir)) throw MissingFile(image_dir.string());
  SequenceRecord rec;
  rec.id = seq;
  rec.source = Source::Kitti;
  rec.fps = 10.0;
  rec.gt = read_kitti_poses(pose_file.string());
  for (auto& f : sorted_files(image_dir, ".png")) rec.frames.push_back(FrameRef{f, nullptr});
  if (rec.frames.size() != rec.gt.size()) {
    throw LengthMismatch(seq + ": " + std::to_string(rec.frames.size()) + " frames but " +
                         std::to_string(rec.gt.size()) + " poses");
  }
  return rec;
}

void write_kitti_sequence(const std::string& root, const SequenceRecord& seq) {
  const fs::path image_dir = fs::path(root) / "sequences" / seq.id / "image_2";
  fs::create_directories(image_dir);
  fs::create_directories(fs::path(root) / "poses");
  write_kitti_poses((fs::path(root) / "poses" / (seq.id + ".txt")).string(), seq.gt);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".png";
    const FrameRef& f = seq.frames[i];
    save_image(f.image ? *f.image : load_image(f.path), (image_dir / name.str()).string());
  }
}

Pose read_sevenscenes_pose(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::vector<double> v = parse_numbers(buf.str(), path);
  if (v.size() != 16) throw PoseParseError(path + ": expected 16 numbers, got " + std::to_string(v.size()));
  const double bottom_err = std::abs(v[12]) + std::abs(v[13]) + std::abs(v[14]) + std::abs(v[15] - 1.0);
  if (bottom_err > 1e-6) throw PoseParseError(path + ": last row is not [0 0 0 1]");
  PoseMatrix m;
  for (int i = 0; i < 12; ++i) m(i / 4, i % 4) = v[i];
  return from_matrix(m);
}

void write_sevenscenes_pose(const std::string& path, const Pose& pose) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const Eigen::Matrix4d m = to_homogeneous(pose);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) out << (c ? "\t" : "") << format_number(m(r, c));
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

SequenceRecord load_sevenscenes_sequence(const std::string& root, const std::string& scene, const std::string& seq) {
  const fs::path dir = fs::path(root) / scene / ("seq-" + seq);
  if (!fs::is_directory(dir)) throw MissingFile(dir.string());
  const auto colors = sorted_files(dir, ".color.png");
  const auto poses = sorted_files(dir, ".pose.txt");
  if (colors.size() != poses.size()) {
    throw LengthMismatch(dir.string() + ": " + std::to_string(colors.size()) + " frames but " +
                         std::to_string(poses.size()) + " poses");
  }
  SequenceRecord rec;
  rec.id = scene + "/seq-" + seq;
  rec.source = Source::SevenScenes;
  rec.fps = 30.0;
  for (std::size_t i = 0; i < colors.size(); ++i) {
    rec.frames.push_back(FrameRef{colors[i], nullptr});
    rec.gt.push_back(read_sevenscenes_pose(poses[i]));
  }
  return rec;
}

// Synthetic sequences ---------------------------------------------------------

void SynthParams::validate() const {
  if (n_frames < 2) throw ConfigError("n_frames must be >= 2");
  if (speed_min < 0 || speed_max < speed_min) throw ConfigError("speed range must satisfy 0 <= min <= max");
  if (yaw_rate_min < 0 || yaw_rate_max < yaw_rate_min) throw ConfigError("yaw rate range must satisfy 0 <= min <= max");
  if (segment_min < 1 || segment_max < segment_min) throw ConfigError("segment range must satisfy 1 <= min <= max");
  if (fps <= 0) throw ConfigError("fps must be > 0");
  if (altitude <= 0 || climb_amplitude < 0 || climb_amplitude >= altitude || climb_period <= 0)
    throw ConfigError("altitude must exceed climb_amplitude >= 0, climb_period > 0");
  if (texture_noise < 0 || landmark_strength < 0) throw ConfigError("noise levels must be >= 0");
  if (image_height < 8 || image_width < 8) throw ConfigError("image size must be at least 8x8");
  if (circuit_radius < 0) throw ConfigError("circuit_radius must be >= 0");
}

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Wave {
  double kx, ky, phase;
  std::array<double, 3> amp;
};

/// Ground texture: fine sinusoid mixture, slow position-dependent color
/// gradients, and value-noise grain; a pure function of the ground point.
class Texture {
 public:
  Texture(const SynthParams& p, std::mt19937_64& rng) : noise_(p.texture_noise), seed_(mix64(p.seed)) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto add = [&](std::vector<Wave>& out, int n, double lambda_min, double lambda_max, double amplitude) {
      for (int i = 0; i < n; ++i) {
        const double lambda = lambda_min * std::pow(lambda_max / lambda_min, u(rng));
        const double theta = 2.0 * std::numbers::pi * u(rng);
        const double k = 2.0 * std::numbers::pi / lambda;
        Wave w{k * std::cos(theta), k * std::sin(theta), 2.0 * std::numbers::pi * u(rng), {}};
        for (double& a : w.amp) a = amplitude * (2.0 * u(rng) - 1.0);
        out.push_back(w);
      }
    };
    add(fine_, 14, 8.0, 60.0, 0.09);
    add(slow_, 4, 250.0, 1200.0, p.landmark_strength);
  }

  std::array<double, 3> operator()(double x, double y) const {
    std::array<double, 3> c{0.5, 0.5, 0.5};
    for (const auto* set : {&fine_, &slow_}) {
      for (const Wave& w : *set) {
        const double s = std::sin(w.kx * x + w.ky * y + w.phase);
        for (int ch = 0; ch < 3; ++ch) c[ch] += w.amp[ch] * s;
      }
    }
    if (noise_ > 0) {
      const double gx = x / kCell, gy = y / kCell;
      const double fx = std::floor(gx), fy = std::floor(gy);
      const double ax = gx - fx, ay = gy - fy;
      const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
      for (int ch = 0; ch < 3; ++ch) {
        const double v00 = grain(ix, iy, ch), v10 = grain(ix + 1, iy, ch);
        const double v01 = grain(ix, iy + 1, ch), v11 = grain(ix + 1, iy + 1, ch);
        c[ch] += noise_ * ((1 - ay) * ((1 - ax) * v00 + ax * v10) + ay * ((1 - ax) * v01 + ax * v11));
      }
    }
    for (double& v : c) v = std::clamp(v, 0.0, 1.0);
    return c;
  }

 private:
  static constexpr double kCell = 0.5;
  double grain(std::int64_t ix, std::int64_t iy, int ch) const {
    const std::uint64_t h = mix64(seed_ ^ mix64(static_cast<std::uint64_t>(ix) * 0x100000001b3ULL ^
                                                 mix64(static_cast<std::uint64_t>(iy) * 31 + ch)));
    return 2.0 * (static_cast<double>(h >> 11) * 0x1.0p-53) - 1.0;
  }

  std::vector<Wave> fine_, slow_;
  double noise_;
  std::uint64_t seed_;
};

Pose camera_pose(const Eigen::Vector3d& position, double heading) {
  // Optical axis points down, image up is the direction of travel.
  Eigen::Matrix3d R;
  R.col(0) = Eigen::Vector3d(std::sin(heading), -std::cos(heading), 0.0);
  R.col(1) = Eigen::Vector3d(-std::cos(heading), -std::sin(heading), 0.0);
  R.col(2) = Eigen::Vector3d(0.0, 0.0, -1.0);
  return Pose(Eigen::Quaterniond(R), position);
}

Image render(const Texture& tex, const Pose& pose, int height, int width) {
  Image img(height, width);
  const double f = 0.5 * width, cx = 0.5 * width, cy = 0.5 * height;
  const Eigen::Matrix3d R = pose.rotation_matrix();
  const Eigen::Vector3d p = pose.translation();
  constexpr int kSub = 2;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double u = x + (sx + 0.5) / kSub, v = y + (sy + 0.5) / kSub;
          const Eigen::Vector3d dir = R * Eigen::Vector3d((u - cx) / f, (v - cy) / f, 1.0);
          const double lambda = -p.z() / dir.z();
          const auto c = tex(p.x() + lambda * dir.x(), p.y() + lambda * dir.y());
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch];
        }
      }
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = static_cast<float>(acc[ch] / (kSub * kSub));
    }
  }
  return img;
}

}  // namespace

namespace {

/// Closed loop r(a) = R (1 + 0.2 sin 3a) traversed counter-clockwise.
struct Circuit {
  double radius;

  Eigen::Vector2d point(double a) const {
    const double r = radius * (1.0 + 0.2 * std::sin(3.0 * a));
    return {r * std::cos(a), r * std::sin(a)};
  }
  Eigen::Vector2d tangent(double a) const {
    const double r = radius * (1.0 + 0.2 * std::sin(3.0 * a));
    const double dr = radius * 0.6 * std::cos(3.0 * a);
    return {dr * std::cos(a) - r * std::sin(a), dr * std::sin(a) + r * std::cos(a)};
  }
  double heading(double a) const {
    const Eigen::Vector2d d = tangent(a);
    return std::atan2(d.y(), d.x());
  }
  /// Parameter after moving `length` meters along the loop (midpoint rule).
  double advance(double a, double length) const {
    constexpr int kSub = 32;
    const double h = length / kSub;
    for (int k = 0; k < kSub; ++k) {
      const double mid = a + 0.5 * h / tangent(a).norm();
      a += h / tangent(mid).norm();
    }
    return a;
  }
};

}  // namespace

SequenceRecord synth_sequence(const SynthParams& p, const std::string& id) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  const Texture tex(p, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  SequenceRecord rec;
  rec.id = id;
  rec.fps = p.fps;
  rec.source = Source::Synthetic;

  const double dt = 1.0 / p.fps;
  const double deg = std::numbers::pi / 180.0;
  const Circuit loop{p.circuit_radius};
  double arc = 0.0;  // loop parameter
  Eigen::Vector3d position(0.0, 0.0, p.altitude);
  double heading = 0.0, speed = 0.0, yaw_rate = 0.0;
  if (loop.radius > 0.0) {
    position.head<2>() = loop.point(arc);
    heading = loop.heading(arc);
  }
  int segment_left = 0;
  for (int i = 0; i < p.n_frames; ++i) {
    const Pose pose = camera_pose(position, heading);
    rec.gt.push_back(pose);
    rec.frames.push_back(FrameRef{"", std::make_shared<const Image>(render(tex, pose, p.image_height, p.image_width))});

    if (segment_left == 0) {
      segment_left = p.segment_min + static_cast<int>(u(rng) * (p.segment_max - p.segment_min + 1));
      segment_left = std::min(segment_left, p.segment_max);
      speed = p.speed_min + u(rng) * (p.speed_max - p.speed_min);
      const double magnitude = p.yaw_rate_min + u(rng) * (p.yaw_rate_max - p.yaw_rate_min);
      yaw_rate = (u(rng) < 0.5 ? -1.0 : 1.0) * magnitude * deg;
    }
    --segment_left;

    // Step length is exactly speed*dt; the climb takes its share of it.
    const double step = speed * dt;
    const double target_z =
        p.altitude + p.climb_amplitude * std::sin(2.0 * std::numbers::pi * (i + 1) * dt / p.climb_period);
    const double dz = std::clamp(target_z - position.z(), -0.5 * step, 0.5 * step);
    const double horizontal = std::sqrt(std::max(step * step - dz * dz, 0.0));
    if (loop.radius > 0.0) {
      arc = loop.advance(arc, horizontal);
      position = Eigen::Vector3d(0.0, 0.0, position.z() + dz);
      position.head<2>() = loop.point(arc);
      heading = loop.heading(arc);
    } else {
      position += Eigen::Vector3d(horizontal * std::cos(heading), horizontal * std::sin(heading), dz);
      heading += yaw_rate * dt;
    }
  }
  return rec;
}

// Manifest --------------------------------------------------------------------

void write_manifest(const std::string& path, const SynthParams& p, const std::string& id) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "id=" << id << '\n'
      << "n_frames=" << p.n_frames << '\n'
      << "speed_min=" << format_number(p.speed_min) << '\n'
      << "speed_max=" << format_number(p.speed_max) << '\n'
      << "yaw_rate_min=" << format_number(p.yaw_rate_min) << '\n'
      << "yaw_rate_max=" << format_number(p.yaw_rate_max) << '\n'
      << "segment_min=" << p.segment_min << '\n'
      << "segment_max=" << p.segment_max << '\n'
      << "fps=" << format_number(p.fps) << '\n'
      << "altitude=" << format_number(p.altitude) << '\n'
      << "climb_amplitude=" << format_number(p.climb_amplitude) << '\n'
      << "climb_period=" << format_number(p.climb_period) << '\n'
      << "texture_noise=" << format_number(p.texture_noise) << '\n'
      << "landmark_strength=" << format_number(p.landmark_strength) << '\n'
      << "circuit_radius=" << format_number(p.circuit_radius) << '\n'
      << "image_height=" << p.image_height << '\n'
      << "image_width=" << p.image_width << '\n'
      << "seed=" << p.seed << '\n';
  if (!out) throw IoError("write failed: " + path);
}

SynthParams read_manifest(const std::string& path, std::string* id) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  SynthParams p;
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto num = [&](const std::string& k, double& dst) {
    if (kv.count(k)) dst = std::stod(kv.at(k));
    kv.erase(k);
  };
  auto integer = [&](const std::string& k, int& dst) {
    if (kv.count(k)) dst = std::stoi(kv.at(k));
    kv.erase(k);
  };
  try {
    if (kv.count("id")) {
      if (id) *id = kv.at("id");
      kv.erase("id");
    }
    integer("n_frames", p.n_frames);
    num("speed_min", p.speed_min);
    num("speed_max", p.speed_max);
    num("yaw_rate_min", p.yaw_rate_min);
    num("yaw_rate_max", p.yaw_rate_max);
    integer("segment_min", p.segment_min);
    integer("segment_max", p.segment_max);
    num("fps", p.fps);
    num("altitude", p.altitude);
    num("climb_amplitude", p.climb_amplitude);
    num("climb_period", p.climb_period);
    num("texture_noise", p.texture_noise);
    num("landmark_strength", p.landmark_strength);
    num("circuit_radius", p.circuit_radius);
    integer("image_height", p.image_height);
    integer("image_width", p.image_width);
    if (kv.count("seed")) p.seed = std::stoull(kv.at("seed"));
    kv.erase("seed");
  } catch (const std::logic_error& e) {
    throw ConfigError(path + ": bad value (" + e.what() + ")");
  }
  if (!kv.empty()) throw ConfigError(path + ": unknown key '" + kv.begin()->first + "'");
  p.validate();
  return p;
}

// Windows ---------------------------------------------------------------------

WindowStream::WindowStream(const SequenceRecord& seq, int K, int stride, const PairSpec& spec)
    : seq_(seq), K_(K), stride_(stride), spec_(spec) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  if (spec.K != K) throw ShapeMismatch("pair spec is for K=" + std::to_string(spec.K));
  if (seq.frames.size() != seq.gt.size()) throw LengthMismatch(seq.id + ": frame/pose count mismatch");
  if (K < 1 || seq.size() < static_cast<std::size_t>(K)) {
    throw SequenceTooShort(seq.id + ": " + std::to_string(seq.size()) + " frames < K=" + std::to_string(K));
  }
  count_ = (seq.size() - K) / stride + 1;
}

WindowSample WindowStream::operator[](std::size_t i) const {
  if (i >= count_) throw ShapeMismatch("window index out of range");
  WindowSample w;
  w.start = i * stride_;
  std::vector<Pose> gt;
  for (int k = 0; k < K_; ++k) {
    w.indices.push_back(w.start + k);
    gt.push_back(seq_.gt[w.start + k]);
  }
  w.target = make_window_target(std::move(gt), spec_);
  assert(target_is_consistent(w.target, spec_));
  return w;
}

WindowStream window_iter(const SequenceRecord& seq, int K, int stride, const PairSpec& spec) {
  return WindowStream(seq, K, stride, spec);
}

SequenceRecord slice(const SequenceRecord& seq, std::size_t begin, std::size_t end) {
  if (begin > end || end > seq.size()) throw ShapeMismatch("slice out of range");
  SequenceRecord out;
  out.id = seq.id;
  out.fps = seq.fps;
  out.source = seq.source;
  out.frames.assign(seq.frames.begin() + begin, seq.frames.begin() + end);
  out.gt.assign(seq.gt.begin() + begin, seq.gt.begin() + end);
  return out;
}

}  // namespace ctcvo
