#include "ctcvo/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ctcvo/errors.hpp"
#include "ctcvo/raw_pose.hpp"

namespace ctcvo {

using ad::Matrix;
using ad::Var;

std::string to_string(Preset p) { return p == Preset::Paper ? "paper" : "tiny"; }

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Fused: return "fused";
    case Mode::RelativeOnly: return "relative_only";
    case Mode::GlobalOnly: return "global_only";
  }
  return "fused";
}

Preset parse_preset(const std::string& s) {
  if (s == "paper") return Preset::Paper;
  if (s == "tiny") return Preset::Tiny;
  throw ConfigError("unknown preset '" + s + "'");
}

Mode parse_mode(const std::string& s) {
  if (s == "fused") return Mode::Fused;
  if (s == "relative_only") return Mode::RelativeOnly;
  if (s == "global_only") return Mode::GlobalOnly;
  throw ConfigError("unknown mode '" + s + "'");
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = Preset::Paper;
  c.image_height = c.image_width = 224;
  c.stem_channels = 64;
  c.backbone_channels = {StageSpec{3, 64, 256, 1}, StageSpec{4, 128, 512, 2}, StageSpec{6, 256, 1024, 2},
                         StageSpec{3, 512, 1024, 2}};
  c.lstm_hidden = 1000;
  c.lstm_layers_relative = 2;
  c.lstm_layers_global = 1;
  c.fc_width = 1024;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.preset = Preset::Tiny;
  c.image_height = c.image_width = 64;
  c.stem_channels = 8;
  c.backbone_channels = {StageSpec{1, 8, 16, 1}, StageSpec{1, 8, 32, 2}, StageSpec{1, 16, 32, 2},
                         StageSpec{1, 16, 32, 2}};
  c.lstm_hidden = 64;
  c.lstm_layers_relative = 2;
  c.lstm_layers_global = 1;
  c.fc_width = 64;
  return c;
}

void ModelConfig::validate() const {
  if (K < 2 || K > 32) throw ConfigError("K must lie in [2, 32], got " + std::to_string(K));
  if (image_height < 32 || image_width < 32) throw ConfigError("image size must be at least 32x32");
  const int minimum = preset == Preset::Tiny ? 8 : 1;
  auto check = [&](int v, const char* what) {
    if (v < minimum) throw ConfigError(std::string(what) + " must be >= " + std::to_string(minimum));
  };
  check(stem_channels, "stem_channels");
  for (const auto& s : backbone_channels) {
    check(s.mid, "stage width");
    check(s.out, "stage width");
    if (s.blocks < 1 || s.stride < 1) throw ConfigError("stage blocks and stride must be >= 1");
  }
  check(lstm_hidden, "lstm_hidden");
  check(fc_width, "fc_width");
  if (lstm_layers_relative < 1 || lstm_layers_global < 1) throw ConfigError("recurrent layer counts must be >= 1");
  if (preset == Preset::Paper) {
    if (!(*this == [&] {
          ModelConfig p = paper();
          p.K = K;
          p.seed = seed;
          return p;
        }())) {
      throw ConfigError("paper preset dimensions are fixed");
    }
  }
}

const LayerInfo& ModelDescription::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw ConfigError("no layer named '" + name + "'");
}

VoModel::Network VoModel::build(Builder& b, const ModelConfig& cfg) {
  Network n;
  const auto& s = cfg.backbone_channels;
  n.stem = Conv2d(b, "cnn1.stem", 3, cfg.stem_channels, 7, 2, 3, {cfg.image_height, cfg.image_width});
  n.stem_bn = BatchNorm(b, "cnn1.stem_bn", cfg.stem_channels, n.stem.output_shape());
  n.pool = MaxPool(b, "cnn1.pool", cfg.stem_channels, 3, 2, 1, n.stem.output_shape());
  n.res2 = ResStage(b, "cnn1.res2", s[0].blocks, cfg.stem_channels, s[0].mid, s[0].out, s[0].stride,
                    n.pool.output_shape());
  n.res3 = ResStage(b, "cnn1.res3", s[1].blocks, s[0].out, s[1].mid, s[1].out, s[1].stride, n.res2.output_shape());
  n.res4 = ResStage(b, "cnn1.res4", s[2].blocks, s[1].out, s[2].mid, s[2].out, s[2].stride, n.res3.output_shape());
  n.stage4 = n.res4.output_shape();

  n.rel5 = ResStage(b, "rel.res5", s[3].blocks, 2 * s[2].out, s[3].mid, s[3].out, s[3].stride, n.stage4);
  n.glob5 = ResStage(b, "glob.res5", s[3].blocks, s[2].out, s[3].mid, s[3].out, s[3].stride, n.stage4);
  n.stage5 = n.rel5.output_shape();
  const int flat = n.stage5.height * n.stage5.width * s[3].out;
  const int fc = cfg.fc_width;

  n.rel_lstm = Lstm(b, "rel.lstm", flat, cfg.lstm_hidden, cfg.lstm_layers_relative, cfg.K - 1);
  n.fc1 = Linear(b, "rel.fc1", cfg.lstm_hidden, fc);
  n.rel_t = Linear(b, "rel.fc_t", fc, 3, 0.01);
  n.rel_q = Linear(b, "rel.fc_q", fc, 4, 0.01);

  n.glob_lstm = Lstm(b, "glob.lstm", flat, cfg.lstm_hidden, cfg.lstm_layers_global, cfg.K);
  n.fc2 = Linear(b, "glob.fc2", cfg.lstm_hidden, fc);
  n.glob_t = Linear(b, "glob.fc_t", fc, 3, 0.01);
  n.glob_q = Linear(b, "glob.fc_q", fc, 4, 0.01);

  n.fc3 = Linear(b, "fuse.fc3", 2 * fc, fc);
  n.fc4 = Linear(b, "fuse.fc4", fc, 3, 0.01);
  n.fc5 = Linear(b, "fuse.fc5", fc, 4, 0.01);

  if (!b.dry_run()) {
    // Quaternion heads start at the identity rotation.
    for (const Linear* q : {&n.rel_q, &n.glob_q, &n.fc5}) b.params()->value(q->bias_index())(0, 0) = 1.0;
  }
  return n;
}

ModelDescription describe(const ModelConfig& cfg) {
  cfg.validate();
  Builder b(nullptr, nullptr);
  const VoModel::Network n = VoModel::build(b, cfg);
  ModelDescription d;
  d.layers = b.infos();
  for (const auto& l : d.layers) d.parameter_count += l.params;
  d.feature_grid = n.stage4;
  d.feature_channels = cfg.backbone_channels[2].out;
  d.stage5_grid = n.stage5;
  d.stage5_channels = cfg.backbone_channels[3].out;
  d.recurrent_input = static_cast<long long>(n.stage5.height) * n.stage5.width * d.stage5_channels;
  return d;
}

VoModel::VoModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  spec_ = make_pair_spec(cfg_.K);
  std::mt19937_64 rng(cfg_.seed);
  Builder b(&params_, &rng);
  net_ = build(b, cfg_);
}

// -----------------------------------------------------------------------------

void fit_image_stats(std::span<const Image> frames, NormStats& stats) {
  if (frames.empty()) throw EmptyBatch("no frames for image statistics");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  double count = 0.0;
  for (const Image& img : frames) {
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img.data[c * plane + i];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += static_cast<double>(plane);
  }
  stats.image_mean = sum / count;
  const Eigen::Vector3d var = (sq / count - stats.image_mean.cwiseAbs2()).cwiseMax(0.0);
  stats.image_std = var.cwiseSqrt().cwiseMax(1e-3);
}

void fit_pose_stats(std::span<const Pose> trajectory, NormStats& stats) {
  if (trajectory.size() < 2) throw SequenceTooShort("pose statistics need at least two poses");
  auto moments = [](const std::vector<Eigen::Vector3d>& v, Eigen::Vector3d& mean, Eigen::Vector3d& stddev) {
    mean.setZero();
    for (const auto& x : v) mean += x;
    mean /= static_cast<double>(v.size());
    Eigen::Vector3d var = Eigen::Vector3d::Zero();
    for (const auto& x : v) var += (x - mean).cwiseAbs2();
    stddev = (var / static_cast<double>(v.size())).cwiseSqrt().cwiseMax(1e-3);
  };
  std::vector<Eigen::Vector3d> positions, steps;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    positions.push_back(trajectory[i].translation());
    if (i > 0) steps.push_back(ego_motion(trajectory[i - 1], trajectory[i]).translation());
  }
  moments(positions, stats.glob_t_mean, stats.glob_t_std);
  moments(steps, stats.rel_t_mean, stats.rel_t_std);
}

// -----------------------------------------------------------------------------

WindowPrediction to_prediction(const WindowOutput& out) {
  WindowPrediction p;
  for (const Var& v : out.global) p.pred_global.push_back(v.value().row(0).transpose());
  for (const Var& v : out.pairs) p.pred_pairs.push_back(v.value().row(0).transpose());
  return p;
}

Var attach_window_loss(Graph& g, const WindowOutput& out, const WindowTarget& target, const PairSpec& spec,
                       const LossWeights& w, bool with_global, double scale, LossTerms* terms) {
  const WindowPrediction pred = to_prediction(out);
  WindowGradient grad;
  const LossTerms t = window_loss(pred, target, spec, w, with_global, &grad);
  if (terms) *terms = t;
  std::vector<Var> parents = out.pairs;
  if (with_global) parents.insert(parents.end(), out.global.begin(), out.global.end());
  Matrix value(1, 1);
  value(0, 0) = scale * t.total;
  const std::size_t n_pairs = out.pairs.size();
  return g.tape().record(std::move(value), parents,
                         [parents, grad = std::move(grad), scale, n_pairs](ad::Tape& tape, int self) {
                           const double s = scale * tape.grad(self)(0, 0);
                           for (std::size_t k = 0; k < parents.size(); ++k) {
                             const int id = parents[k].id();
                             if (!tape.requires_grad(id)) continue;
                             const RawPose& d = k < n_pairs ? grad.d_pairs[k] : grad.d_global[k - n_pairs];
                             tape.grad(id).row(0) += s * d.transpose();
                           }
                         });
}

Var compose_adjacent(const std::vector<Var>& adjacent, int i, int j) {
  if (i < 0 || j <= i || j > static_cast<int>(adjacent.size()))
    throw ShapeMismatch("pair (" + std::to_string(i) + "," + std::to_string(j) + ") outside the window");
  Var acc = adjacent[i];
  for (int m = i + 1; m < j; ++m) acc = ad::compose_pose(adjacent[m], acc);
  return acc;
}

// -----------------------------------------------------------------------------

Var VoModel::input(Graph& g, std::span<const Image> frames) const {
  const int H = cfg_.image_height, W = cfg_.image_width;
  const Eigen::Index plane = static_cast<Eigen::Index>(H) * W;
  Matrix x(static_cast<Eigen::Index>(frames.size()) * plane, 3);
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const Image& img = frames[n];
    if (img.height != H || img.width != W || img.data.size() != static_cast<std::size_t>(3 * plane)) {
      throw ShapeMismatch("frame " + std::to_string(n) + " is " + std::to_string(img.height) + "x" +
                          std::to_string(img.width) + ", model expects " + std::to_string(H) + "x" +
                          std::to_string(W));
    }
    for (int c = 0; c < 3; ++c) {
      const double mu = stats_.image_mean[c], inv = 1.0 / stats_.image_std[c];
      for (Eigen::Index i = 0; i < plane; ++i) x(n * plane + i, c) = (img.data[c * plane + i] - mu) * inv;
    }
  }
  return g.constant(std::move(x));
}

FeatureMap VoModel::extract_features(Graph& g, std::span<const Image> frames) const {
  if (frames.empty()) throw EmptyBatch("no frames");
  FeatureMap x{input(g, frames), static_cast<int>(frames.size()), cfg_.image_height, cfg_.image_width};
  x = net_.stem_bn.forward(g, net_.stem.forward(g, x));
  x.data = ad::elu(x.data);
  x = net_.pool.forward(g, x);
  x = net_.res2.forward(g, x);
  x = net_.res3.forward(g, x);
  return net_.res4.forward(g, x);
}

Var VoModel::stage5_relative(Graph& g, const FeatureMap& f) const {
  const Eigen::Index pix = f.pixels();
  std::vector<Var> pairs;
  for (int i = 0; i + 1 < f.items; ++i) {
    pairs.push_back(ad::concat_cols({ad::slice_rows(f.data, i * pix, pix), ad::slice_rows(f.data, (i + 1) * pix, pix)}));
  }
  FeatureMap cat{ad::concat_rows(pairs), f.items - 1, f.height, f.width};
  FeatureMap r5 = net_.rel5.forward(g, cat);
  return ad::flatten_blocks(r5.data, r5.items, r5.pixels());
}

std::vector<Var> VoModel::heads(Graph& g, Var embedding, const Linear& t_head, const Linear& q_head,
                                const Eigen::Vector3d& t_mean, const Eigen::Vector3d& t_std) const {
  Var t = ad::affine_rowwise(t_head.forward(g, embedding), t_std.transpose(), t_mean.transpose());
  Var q = q_head.forward(g, embedding);
  Var rows = ad::concat_cols({t, q});
  std::vector<Var> out;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) out.push_back(ad::slice_rows(rows, r, 1));
  return out;
}

VoModel::RelativeOut VoModel::relative_branch(Graph& g, const FeatureMap& features) const {
  if (features.items < 2) throw ShapeMismatch("relative branch needs at least two frames");
  if (features.channels() != cfg_.backbone_channels[2].out)
    throw ShapeMismatch("relative branch expects " + std::to_string(cfg_.backbone_channels[2].out) + " channels");
  Var seq = net_.rel_lstm.forward(g, stage5_relative(g, features));
  RelativeOut out;
  out.fc1 = ad::elu(net_.fc1.forward(g, seq));
  out.adjacent = heads(g, out.fc1, net_.rel_t, net_.rel_q, stats_.rel_t_mean, stats_.rel_t_std);
  return out;
}

VoModel::GlobalOut VoModel::global_branch(Graph& g, const FeatureMap& features) const {
  if (features.items < 1) throw ShapeMismatch("global branch needs at least one frame");
  if (features.channels() != cfg_.backbone_channels[2].out)
    throw ShapeMismatch("global branch expects " + std::to_string(cfg_.backbone_channels[2].out) + " channels");
  FeatureMap g5 = net_.glob5.forward(g, features);
  Var seq = net_.glob_lstm.forward(g, ad::flatten_blocks(g5.data, g5.items, g5.pixels()));
  GlobalOut out;
  out.fc2 = ad::elu(net_.fc2.forward(g, seq));
  out.global = heads(g, out.fc2, net_.glob_t, net_.glob_q, stats_.glob_t_mean, stats_.glob_t_std);
  return out;
}

std::vector<Var> VoModel::fuse(Graph& g, Var fc1, Var fc2) const {
  const Eigen::Index width = cfg_.fc_width;
  if (fc1.cols() != width || fc2.cols() != width || fc1.rows() + 1 != fc2.rows())
    throw ShapeMismatch("fuse expects (K-1) and K embeddings of width " + std::to_string(width));
  Var padded = ad::concat_rows({g.constant(Matrix::Zero(1, width)), fc1});
  Var h = ad::elu(net_.fc3.forward(g, ad::concat_cols({padded, fc2})));
  return heads(g, h, net_.fc4, net_.fc5, stats_.glob_t_mean, stats_.glob_t_std);
}

Var VoModel::fuse_step(Graph& g, Var fc1_row, Var fc2_row) const {
  const Eigen::Index width = cfg_.fc_width;
  if (fc1_row.rows() != 1 || fc2_row.rows() != 1 || fc1_row.cols() != width || fc2_row.cols() != width)
    throw ShapeMismatch("fuse_step expects two 1x" + std::to_string(width) + " embeddings");
  Var h = ad::elu(net_.fc3.forward(g, ad::concat_cols({fc1_row, fc2_row})));
  return heads(g, h, net_.fc4, net_.fc5, stats_.glob_t_mean, stats_.glob_t_std).front();
}

WindowOutput VoModel::forward(Graph& g, std::span<const Image> frames, const ForwardOptions& opt) const {
  if (static_cast<int>(frames.size()) != cfg_.K)
    throw ShapeMismatch("window has " + std::to_string(frames.size()) + " frames, K = " + std::to_string(cfg_.K));
  const FeatureMap f = extract_features(g, frames);
  WindowOutput out;
  auto pairs_from_adjacent = [&] {
    for (const auto& [i, j] : spec_.pairs) out.pairs.push_back(compose_adjacent(out.adjacent, i, j));
  };

  switch (opt.mode) {
    case Mode::Fused: {
      RelativeOut rel = relative_branch(g, f);
      GlobalOut glob = global_branch(g, f);
      out.fc1 = rel.fc1;
      out.fc2 = glob.fc2;
      out.adjacent = std::move(rel.adjacent);
      out.global = fuse(g, out.fc1, out.fc2);
      pairs_from_adjacent();
      break;
    }
    case Mode::RelativeOnly: {
      RelativeOut rel = relative_branch(g, f);
      out.fc1 = rel.fc1;
      out.adjacent = std::move(rel.adjacent);
      pairs_from_adjacent();
      if (opt.anchor) {
        // Integrate world-to-camera poses, then invert back.
        out.global.push_back(g.constant(Matrix(to_raw(*opt.anchor).transpose())));
        Var extrinsic = g.constant(Matrix(to_raw(inverse(*opt.anchor)).transpose()));
        for (const Var& step : out.adjacent) {
          extrinsic = ad::compose_pose(step, extrinsic);
          out.global.push_back(ad::inverse_pose(extrinsic));
        }
      }
      break;
    }
    case Mode::GlobalOnly: {
      GlobalOut glob = global_branch(g, f);
      out.fc2 = glob.fc2;
      out.global = std::move(glob.global);
      if (opt.pairs_from_relative) {
        RelativeOut rel = relative_branch(g, f);
        out.fc1 = rel.fc1;
        out.adjacent = std::move(rel.adjacent);
        pairs_from_adjacent();
      } else {
        std::vector<Var> inverses(out.global.size());
        for (const auto& [i, j] : spec_.pairs) {
          if (!inverses[j].valid()) inverses[j] = ad::inverse_pose(out.global[j]);
          out.pairs.push_back(ad::compose_pose(inverses[j], out.global[i]));
        }
      }
      break;
    }
  }
  return out;
}

void VoModel::calibrate(std::span<const Image> frames, const std::vector<std::string>& prefixes) {
  if (frames.size() < 2) throw SequenceTooShort("calibration needs at least two frames");
  Graph g(params_);
  g.enable_calibration(&params_, prefixes);
  const FeatureMap f = extract_features(g, frames);
  stage5_relative(g, f);
  net_.glob5.forward(g, f);
}

std::vector<bool> VoModel::mask(const std::vector<std::string>& prefixes) const {
  std::vector<bool> m(params_.size(), false);
  for (int i = 0; i < params_.size(); ++i) {
    const auto& block = params_.block(i);
    if (block.kind != ParameterSet::Kind::Weight) continue;
    for (const auto& p : prefixes)
      if (block.name.rfind(p, 0) == 0) m[i] = true;
  }
  return m;
}

}  // namespace ctcvo
