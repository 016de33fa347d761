#pragma once

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <vector>

namespace ctcvo::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
/// order; backward() walks them in reverse. A node only records a backward
/// closure when one of its parents requires a gradient, so frozen
/// sub-graphs cost nothing on the way back.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  /// Leaf that reads `external` in place (parameters); `external` must
  /// outlive the tape.
  Var external(const Matrix* external, bool requires_grad);

  Var handle(int id) { return Var(this, id); }

  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, const std::vector<Var>& parents, Backward backward);

  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }
  /// Gradient accumulator, zero-initialized on first access.
  Matrix& grad(int id);
  const Matrix& grad_or_empty(int id) const { return nodes_[id].grad; }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// Elementwise and linear algebra ---------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x + bias for every row; bias is 1 x cols.
Var add_rowwise(Var x, Var bias);
/// x .* scale + shift per row with constant row vectors.
Var affine_rowwise(Var x, const Eigen::RowVectorXd& scale, const Eigen::RowVectorXd& shift);
Var elu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var sum(Var x);

// Layout ----------------------------------------------------------------------

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
/// Reinterprets `items` consecutive row blocks of height `block` as one row
/// each: (items*block) x C  ->  items x (block*C), column-major within a block.
Var flatten_blocks(Var x, Eigen::Index items, Eigen::Index block);

// Pose ops on 1x7 rows [t, q] -----------------------------------------------

Var compose_pose(Var a, Var b);
Var inverse_pose(Var a);

}  // namespace ctcvo::ad
