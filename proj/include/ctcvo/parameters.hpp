#pragma once

#include <Eigen/Core>
#include <map>
#include <string>
#include <vector>

#include "ctcvo/autodiff.hpp"

namespace ctcvo {

/// Named dense blocks making up a model. Trainable weights and fixed
/// statistics (buffers) live side by side so a checkpoint is one flat list.
class ParameterSet {
 public:
  enum class Kind { Weight, Buffer };

  struct Block {
    std::string name;
    Kind kind = Kind::Weight;
    Eigen::MatrixXd value;
  };

  int add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Kind kind = Kind::Weight);

  int size() const { return static_cast<int>(blocks_.size()); }
  const Block& block(int i) const { return blocks_[i]; }
  Eigen::MatrixXd& value(int i) { return blocks_[i].value; }
  const Eigen::MatrixXd& value(int i) const { return blocks_[i].value; }

  /// -1 when absent.
  int find(const std::string& name) const;
  int at(const std::string& name) const;

  /// Scalar count over all blocks (weights and buffers).
  long long scalar_count() const;
  long long weight_count() const;

  /// Indices of blocks whose name starts with `prefix`.
  std::vector<int> with_prefix(const std::string& prefix) const;

 private:
  std::vector<Block> blocks_;
  std::map<std::string, int> index_;
};

/// Per-block gradient accumulators aligned with a ParameterSet. Blocks that
/// are frozen or buffers stay empty.
struct Gradients {
  std::vector<Eigen::MatrixXd> blocks;

  void add(const Gradients& other);
  void scale(double s);
  double squared_norm() const;
};

/// Binds a ParameterSet to a tape for one forward/backward pass.
class Graph {
 public:
  /// `trainable[i]` selects which weight blocks receive gradients; an empty
  /// mask means nothing is trained (inference).
  Graph(const ParameterSet& params, std::vector<bool> trainable = {});

  ad::Tape& tape() { return tape_; }
  ad::Var param(int index);
  ad::Var constant(Eigen::MatrixXd m) { return tape_.constant(std::move(m)); }

  const ParameterSet& params() const { return params_; }

  /// Batch-norm statistics recalibration: when set, normalization layers
  /// whose name starts with one of the prefixes overwrite their buffers
  /// with the statistics of the current input before applying them.
  void enable_calibration(ParameterSet* mutable_params, std::vector<std::string> prefixes);
  bool calibrating(const std::string& layer_name) const;
  ParameterSet* calibration_target() const { return calibration_target_; }

  /// Adds d(out)/d(param) for every trainable block into `grads`.
  void backward(ad::Var out, Gradients& grads);

 private:
  const ParameterSet& params_;
  std::vector<bool> trainable_;
  std::vector<int> leaf_;  // node id per block, -1 until first use
  ad::Tape tape_;
  ParameterSet* calibration_target_ = nullptr;
  std::vector<std::string> calibration_prefixes_;
};

}  // namespace ctcvo
