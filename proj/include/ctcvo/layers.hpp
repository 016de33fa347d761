#pragma once

#include <random>
#include <string>
#include <vector>

#include "ctcvo/autodiff.hpp"
#include "ctcvo/parameters.hpp"

namespace ctcvo {

/// A stack of `items` feature grids stored as (items*height*width) x channels;
/// row index = (item*height + y)*width + x.
struct FeatureMap {
  ad::Var data;
  int items = 0;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.cols()); }
  int pixels() const { return height * width; }
};

/// Shape record for one layer, used both for structural inspection and to
/// document a preset without allocating it.
struct LayerInfo {
  std::string name;
  std::string kind;
  std::vector<long long> in_shape;
  std::vector<long long> out_shape;
  long long params = 0;
};

/// Allocates and initializes parameter blocks, or only records shapes when
/// constructed without a ParameterSet (dry run).
class Builder {
 public:
  Builder(ParameterSet* params, std::mt19937_64* rng) : params_(params), rng_(rng) {}

  bool dry_run() const { return params_ == nullptr; }

  int normal(const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev);
  int uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, double bound);
  int constant(const std::string& name, Eigen::Index rows, Eigen::Index cols, double value,
               ParameterSet::Kind kind = ParameterSet::Kind::Weight);

  void record(LayerInfo info) { infos_.push_back(std::move(info)); }
  const std::vector<LayerInfo>& infos() const { return infos_; }
  ParameterSet* params() const { return params_; }

 private:
  ParameterSet* params_;
  std::mt19937_64* rng_;
  std::vector<LayerInfo> infos_;
};

struct Shape2d {
  int height = 0;
  int width = 0;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(Builder& b, const std::string& name, int in, int out, int kernel, int stride, int pad,
         Shape2d input);

  FeatureMap forward(Graph& g, const FeatureMap& x) const;
  Shape2d output_shape() const { return out_shape_; }
  int out_channels() const { return out_; }

 private:
  int weight_ = -1;
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Shape2d out_shape_;
};

/// Batch normalization with stored population statistics and a trainable
/// scale/shift. The statistics are estimated from data through Graph
/// calibration instead of per-batch, which keeps every frame's features
/// independent of the rest of the batch.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(Builder& b, const std::string& name, int channels, Shape2d shape, double gamma0 = 1.0);

  FeatureMap forward(Graph& g, const FeatureMap& x) const;

 private:
  std::string name_;
  int gamma_ = -1, beta_ = -1, mean_ = -1, var_ = -1;
};

class MaxPool {
 public:
  MaxPool() = default;
  MaxPool(Builder& b, const std::string& name, int channels, int kernel, int stride, int pad,
          Shape2d input);

  FeatureMap forward(Graph& g, const FeatureMap& x) const;
  Shape2d output_shape() const { return out_shape_; }

 private:
  int kernel_ = 3, stride_ = 2, pad_ = 1;
  Shape2d out_shape_;
};

/// 1x1 -> 3x3 (strided) -> 1x1 residual unit; each convolution is followed by
/// normalization and ELU, with a projection shortcut when the shape changes.
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(Builder& b, const std::string& name, int in, int mid, int out, int stride, Shape2d input);

  FeatureMap forward(Graph& g, const FeatureMap& x) const;
  Shape2d output_shape() const { return conv3_.output_shape(); }

 private:
  Conv2d conv1_, conv2_, conv3_, proj_;
  BatchNorm bn1_, bn2_, bn3_, bn_proj_;
  bool has_proj_ = false;
};

class ResStage {
 public:
  ResStage() = default;
  ResStage(Builder& b, const std::string& name, int blocks, int in, int mid, int out, int stride,
           Shape2d input);

  FeatureMap forward(Graph& g, const FeatureMap& x) const;
  Shape2d output_shape() const { return blocks_.back().output_shape(); }
  int out_channels() const { return out_; }

 private:
  std::vector<Bottleneck> blocks_;
  int out_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(Builder& b, const std::string& name, int in, int out, double weight_std = -1.0);

  /// N x in -> N x out
  ad::Var forward(Graph& g, ad::Var x) const;
  int bias_index() const { return bias_; }
  int weight_index() const { return weight_; }

 private:
  int weight_ = -1, bias_ = -1;
};

/// Stacked LSTM over a sequence given as T x input rows; returns T x hidden.
/// Gate layout in the 4*hidden columns is [input, forget, cell, output].
class Lstm {
 public:
  Lstm() = default;
  Lstm(Builder& b, const std::string& name, int input, int hidden, int layers, int steps);

  ad::Var forward(Graph& g, ad::Var sequence) const;

 private:
  struct Layer {
    int wx = -1, wh = -1, bias = -1;
  };
  std::vector<Layer> layers_;
  int hidden_ = 0;
};

}  // namespace ctcvo
