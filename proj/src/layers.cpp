#include "ctcvo/layers.hpp"

#include <cmath>
#include <limits>

#include "ctcvo/errors.hpp"

namespace ctcvo {

using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

constexpr double kBnEps = 1e-5;

Shape2d conv_out(Shape2d in, int kernel, int stride, int pad) {
  Shape2d out{(in.height + 2 * pad - kernel) / stride + 1, (in.width + 2 * pad - kernel) / stride + 1};
  if (out.height < 1 || out.width < 1) {
    throw ShapeMismatch("spatial size " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                        " too small for kernel " + std::to_string(kernel));
  }
  return out;
}

void check_map(const FeatureMap& x, int channels, const char* layer) {
  if (x.data.rows() != static_cast<Eigen::Index>(x.items) * x.pixels() || x.channels() != channels) {
    throw ShapeMismatch(std::string(layer) + ": expected " + std::to_string(channels) + " channels over " +
                        std::to_string(x.items * x.pixels()) + " rows, got " + std::to_string(x.data.rows()) + "x" +
                        std::to_string(x.channels()));
  }
}

}  // namespace

// Builder ----------------------------------------------------------------------

int Builder::normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev) {
  if (dry_run()) return -1;
  const int id = params_->add(name, rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::MatrixXd& m = params_->value(id);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(*rng_);
  return id;
}

int Builder::uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, double bound) {
  if (dry_run()) return -1;
  const int id = params_->add(name, rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::MatrixXd& m = params_->value(id);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(*rng_);
  return id;
}

int Builder::constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double value,
                      ParameterSet::Kind kind) {
  if (dry_run()) return -1;
  const int id = params_->add(name, rows, cols, kind);
  params_->value(id).setConstant(value);
  return id;
}

// Conv2d -----------------------------------------------------------------------

Conv2d::Conv2d(Builder& b, const std::string& name, int in, int out, int kernel, int stride, int pad,
               Shape2d input)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad) {
  out_shape_ = conv_out(input, kernel, stride, pad);
  const long long fan_in = static_cast<long long>(in) * kernel * kernel;
  weight_ = b.normal(name + ".weight", fan_in, out, std::sqrt(2.0 / static_cast<double>(fan_in)));
  b.record({name, "conv" + std::to_string(kernel) + "x" + std::to_string(kernel) + "/s" + std::to_string(stride),
            {input.height, input.width, in},
            {out_shape_.height, out_shape_.width, out},
            fan_in * out});
}

FeatureMap Conv2d::forward(Graph& g, const FeatureMap& x) const {
  check_map(x, in_, "conv");
  const Shape2d os = conv_out({x.height, x.width}, kernel_, stride_, pad_);
  Var w = g.param(weight_);

  const int H = x.height, W = x.width, k = kernel_, s = stride_, p = pad_;
  const int items = x.items, in = in_;
  const Eigen::Index out_pix = static_cast<Eigen::Index>(os.height) * os.width;
  const Matrix& src = x.data.value();
  const bool pointwise = k == 1 && s == 1 && p == 0;
  Matrix cols = pointwise ? src : Matrix::Zero(items * out_pix, static_cast<Eigen::Index>(in) * k * k);
  for (int c = 0; c < in && !pointwise; ++c) {
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw) {
        const Eigen::Index col = (static_cast<Eigen::Index>(c) * k + kh) * k + kw;
        for (int n = 0; n < items; ++n) {
          for (int oh = 0; oh < os.height; ++oh) {
            const int ih = oh * s - p + kh;
            if (ih < 0 || ih >= H) continue;
            const Eigen::Index src_row = (static_cast<Eigen::Index>(n) * H + ih) * W;
            const Eigen::Index dst_row = n * out_pix + static_cast<Eigen::Index>(oh) * os.width;
            for (int ow = 0; ow < os.width; ++ow) {
              const int iw = ow * s - p + kw;
              if (iw < 0 || iw >= W) continue;
              cols(dst_row + ow, col) = src(src_row + iw, c);
            }
          }
        }
      }
    }
  }
  // One product per frame keeps every frame's result independent of the
  // others down to rounding.
  Tape& t = g.tape();
  Var xin = x.data;
  Matrix out(items * out_pix, out_);
  for (int n = 0; n < items; ++n)
    out.middleRows(n * out_pix, out_pix).noalias() = cols.middleRows(n * out_pix, out_pix) * w.value();
  Var y = t.record(std::move(out), {xin, w},
                   [xin, w, cols = std::move(cols), H, W, k, s, p, items, in, os, out_pix, pointwise](Tape& t, int self) {
                     const Matrix& gy = t.grad(self);
                     if (t.requires_grad(w.id())) t.grad(w.id()).noalias() += cols.transpose() * gy;
                     if (!t.requires_grad(xin.id())) return;
                     const Matrix gcols = gy * t.value(w.id()).transpose();
                     Matrix& gx = t.grad(xin.id());
                     if (pointwise) {
                       gx += gcols;
                       return;
                     }
                     for (int c = 0; c < in; ++c) {
                       for (int kh = 0; kh < k; ++kh) {
                         for (int kw = 0; kw < k; ++kw) {
                           const Eigen::Index col = (static_cast<Eigen::Index>(c) * k + kh) * k + kw;
                           for (int n = 0; n < items; ++n) {
                             for (int oh = 0; oh < os.height; ++oh) {
                               const int ih = oh * s - p + kh;
                               if (ih < 0 || ih >= H) continue;
                               const Eigen::Index src_row = (static_cast<Eigen::Index>(n) * H + ih) * W;
                               const Eigen::Index dst_row = n * out_pix + static_cast<Eigen::Index>(oh) * os.width;
                               for (int ow = 0; ow < os.width; ++ow) {
                                 const int iw = ow * s - p + kw;
                                 if (iw < 0 || iw >= W) continue;
                                 gx(src_row + iw, c) += gcols(dst_row + ow, col);
                               }
                             }
                           }
                         }
                       }
                     }
                   });
  return FeatureMap{y, items, os.height, os.width};
}

// BatchNorm --------------------------------------------------------------------

BatchNorm::BatchNorm(Builder& b, const std::string& name, int channels, Shape2d shape, double gamma0)
    : name_(name) {
  gamma_ = b.constant(name + ".gamma", 1, channels, gamma0);
  beta_ = b.constant(name + ".beta", 1, channels, 0.0);
  mean_ = b.constant(name + ".running_mean", 1, channels, 0.0, ParameterSet::Kind::Buffer);
  var_ = b.constant(name + ".running_var", 1, channels, 1.0, ParameterSet::Kind::Buffer);
  b.record({name, "batchnorm", {shape.height, shape.width, channels}, {shape.height, shape.width, channels},
            2LL * channels});
}

FeatureMap BatchNorm::forward(Graph& g, const FeatureMap& x) const {
  if (g.calibrating(name_)) {
    ParameterSet& target = *g.calibration_target();
    const Matrix& v = x.data.value();
    const Eigen::RowVectorXd mu = v.colwise().mean();
    const Eigen::RowVectorXd var = (v.rowwise() - mu).array().square().colwise().mean();
    target.value(mean_) = mu;
    target.value(var_) = var;
  }
  Var gamma = g.param(gamma_), beta = g.param(beta_);
  const Eigen::RowVectorXd mu = g.params().value(mean_).row(0);
  const Eigen::RowVectorXd inv_std = (g.params().value(var_).array() + kBnEps).rsqrt().matrix().row(0);

  Matrix xhat = (x.data.value().rowwise() - mu).array().rowwise() * inv_std.array();
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);

  Tape& t = g.tape();
  Var xin = x.data;
  Var y = t.record(std::move(out), {xin, gamma, beta},
                   [xin, gamma, beta, xhat = std::move(xhat), inv_std](Tape& t, int self) {
                     const Matrix& gy = t.grad(self);
                     if (t.requires_grad(gamma.id()))
                       t.grad(gamma.id()) += gy.cwiseProduct(xhat).colwise().sum();
                     if (t.requires_grad(beta.id())) t.grad(beta.id()) += gy.colwise().sum();
                     if (t.requires_grad(xin.id())) {
                       const Eigen::RowVectorXd sc = t.value(gamma.id()).row(0).cwiseProduct(inv_std);
                       t.grad(xin.id()).array() += gy.array().rowwise() * sc.array();
                     }
                   });
  return FeatureMap{y, x.items, x.height, x.width};
}

// MaxPool ----------------------------------------------------------------------

MaxPool::MaxPool(Builder& b, const std::string& name, int channels, int kernel, int stride, int pad,
                 Shape2d input)
    : kernel_(kernel), stride_(stride), pad_(pad) {
  out_shape_ = conv_out(input, kernel, stride, pad);
  b.record({name, "maxpool" + std::to_string(kernel) + "x" + std::to_string(kernel) + "/s" + std::to_string(stride),
            {input.height, input.width, channels},
            {out_shape_.height, out_shape_.width, channels},
            0});
}

FeatureMap MaxPool::forward(Graph& g, const FeatureMap& x) const {
  const Shape2d os = conv_out({x.height, x.width}, kernel_, stride_, pad_);
  const int H = x.height, W = x.width, C = x.channels();
  const Eigen::Index out_pix = static_cast<Eigen::Index>(os.height) * os.width;
  const Matrix& src = x.data.value();
  Matrix out(x.items * out_pix, C);
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> arg(out.rows(), C);
  for (int c = 0; c < C; ++c) {
    for (int n = 0; n < x.items; ++n) {
      for (int oh = 0; oh < os.height; ++oh) {
        for (int ow = 0; ow < os.width; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          Eigen::Index best_row = -1;
          for (int kh = 0; kh < kernel_; ++kh) {
            const int ih = oh * stride_ - pad_ + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < kernel_; ++kw) {
              const int iw = ow * stride_ - pad_ + kw;
              if (iw < 0 || iw >= W) continue;
              const Eigen::Index r = (static_cast<Eigen::Index>(n) * H + ih) * W + iw;
              if (src(r, c) > best) {
                best = src(r, c);
                best_row = r;
              }
            }
          }
          const Eigen::Index o = n * out_pix + static_cast<Eigen::Index>(oh) * os.width + ow;
          out(o, c) = best;
          arg(o, c) = best_row;
        }
      }
    }
  }
  Tape& t = g.tape();
  Var xin = x.data;
  Var y = t.record(std::move(out), {xin}, [xin, arg = std::move(arg)](Tape& t, int self) {
    const Matrix& gy = t.grad(self);
    Matrix& gx = t.grad(xin.id());
    for (Eigen::Index c = 0; c < gy.cols(); ++c)
      for (Eigen::Index r = 0; r < gy.rows(); ++r) gx(arg(r, c), c) += gy(r, c);
  });
  return FeatureMap{y, x.items, os.height, os.width};
}

// Bottleneck / stage -----------------------------------------------------------

Bottleneck::Bottleneck(Builder& b, const std::string& name, int in, int mid, int out, int stride, Shape2d input) {
  conv1_ = Conv2d(b, name + ".conv1", in, mid, 1, 1, 0, input);
  bn1_ = BatchNorm(b, name + ".bn1", mid, input);
  conv2_ = Conv2d(b, name + ".conv2", mid, mid, 3, stride, 1, input);
  bn2_ = BatchNorm(b, name + ".bn2", mid, conv2_.output_shape());
  conv3_ = Conv2d(b, name + ".conv3", mid, out, 1, 1, 0, conv2_.output_shape());
  // Residual branch starts as identity.
  bn3_ = BatchNorm(b, name + ".bn3", out, conv3_.output_shape(), 0.0);
  has_proj_ = stride != 1 || in != out;
  if (has_proj_) {
    proj_ = Conv2d(b, name + ".proj", in, out, 1, stride, 0, input);
    bn_proj_ = BatchNorm(b, name + ".bn_proj", out, proj_.output_shape());
  }
}

FeatureMap Bottleneck::forward(Graph& g, const FeatureMap& x) const {
  FeatureMap h = bn1_.forward(g, conv1_.forward(g, x));
  h.data = ad::elu(h.data);
  h = bn2_.forward(g, conv2_.forward(g, h));
  h.data = ad::elu(h.data);
  h = bn3_.forward(g, conv3_.forward(g, h));
  const FeatureMap shortcut = has_proj_ ? bn_proj_.forward(g, proj_.forward(g, x)) : x;
  h.data = ad::elu(ad::add(h.data, shortcut.data));
  return h;
}

ResStage::ResStage(Builder& b, const std::string& name, int blocks, int in, int mid, int out, int stride,
                   Shape2d input)
    : out_(out) {
  if (blocks < 1) throw ConfigError("stage '" + name + "' needs at least one block");
  Shape2d shape = input;
  for (int i = 0; i < blocks; ++i) {
    blocks_.emplace_back(b, name + "." + std::to_string(i), i == 0 ? in : out, mid, out, i == 0 ? stride : 1,
                         shape);
    shape = blocks_.back().output_shape();
  }
}

FeatureMap ResStage::forward(Graph& g, const FeatureMap& x) const {
  FeatureMap h = x;
  for (const auto& block : blocks_) h = block.forward(g, h);
  return h;
}

// Linear -----------------------------------------------------------------------

Linear::Linear(Builder& b, const std::string& name, int in, int out, double weight_std) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = weight_std >= 0.0 ? b.normal(name + ".weight", in, out, weight_std)
                              : b.uniform(name + ".weight", in, out, bound);
  bias_ = b.constant(name + ".bias", 1, out, 0.0);
  b.record({name, "linear", {in}, {out}, static_cast<long long>(in) * out + out});
}

Var Linear::forward(Graph& g, Var x) const {
  return ad::add_rowwise(ad::matmul(x, g.param(weight_)), g.param(bias_));
}

// Lstm -------------------------------------------------------------------------

Lstm::Lstm(Builder& b, const std::string& name, int input, int hidden, int layers, int steps) : hidden_(hidden) {
  if (layers < 1) throw ConfigError("lstm '" + name + "' needs at least one layer");
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  int in = input;
  for (int l = 0; l < layers; ++l) {
    const std::string prefix = name + ".l" + std::to_string(l);
    Layer layer;
    layer.wx = b.uniform(prefix + ".wx", in, 4LL * hidden, bound);
    layer.wh = b.uniform(prefix + ".wh", hidden, 4LL * hidden, bound);
    layer.bias = b.constant(prefix + ".bias", 1, 4LL * hidden, 0.0);
    if (!b.dry_run()) {
      // Forget gate starts open.
      b.params()->value(layer.bias).middleCols(hidden, hidden).setConstant(1.0);
    }
    b.record({prefix, "lstm", {steps, in}, {steps, hidden},
              (static_cast<long long>(in) + hidden + 1) * 4LL * hidden});
    layers_.push_back(layer);
    in = hidden;
  }
}

Var Lstm::forward(Graph& g, Var sequence) const {
  const int H = hidden_;
  Var x = sequence;
  for (const Layer& layer : layers_) {
    Var xp = ad::add_rowwise(ad::matmul(x, g.param(layer.wx)), g.param(layer.bias));
    Var wh = g.param(layer.wh);
    std::vector<Var> hs;
    Var h, c;
    for (Eigen::Index step = 0; step < xp.rows(); ++step) {
      Var gates = ad::slice_rows(xp, step, 1);
      if (step > 0) gates = ad::add(gates, ad::matmul(h, wh));
      Var i = ad::sigmoid(ad::slice_cols(gates, 0, H));
      Var f = ad::sigmoid(ad::slice_cols(gates, H, H));
      Var cand = ad::tanh(ad::slice_cols(gates, 2 * H, H));
      Var o = ad::sigmoid(ad::slice_cols(gates, 3 * H, H));
      c = step > 0 ? ad::add(ad::mul(f, c), ad::mul(i, cand)) : ad::mul(i, cand);
      h = ad::mul(o, ad::tanh(c));
      hs.push_back(h);
    }
    x = ad::concat_rows(hs);
  }
  return x;
}

}  // namespace ctcvo
