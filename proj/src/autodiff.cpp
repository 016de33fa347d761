#include "ctcvo/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ctcvo/errors.hpp"
#include "ctcvo/raw_pose.hpp"

namespace ctcvo::ad {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeMismatch(std::string(op) + ": " + detail);
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::external(const Matrix* external, bool requires_grad) {
  nodes_.push_back(Node{{}, external, {}, requires_grad, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), nullptr, {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = n.external ? *n.external : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var out) {
  require(out.rows() == 1 && out.cols() == 1, "backward", "output must be 1x1, got " + shape(out.value()));
  if (!nodes_[out.id()].requires_grad) return;
  grad(out.id())(0, 0) += 1.0;
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() > 0) n.backward(*this, id);
  }
}

// -----------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul", shape(a.value()) + " * " + shape(b.value()));
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()).noalias() += g * t.value(b.id()).transpose();
    if (t.requires_grad(b.id())) t.grad(b.id()).noalias() += t.value(a.id()).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add", shape(a.value()) + " + " + shape(b.value()));
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()) += g;
    if (t.requires_grad(b.id())) t.grad(b.id()) += g;
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", shape(a.value()) + " - " + shape(b.value()));
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()) += g;
    if (t.requires_grad(b.id())) t.grad(b.id()) -= g;
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", shape(a.value()) + " .* " + shape(b.value()));
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()) += g.cwiseProduct(t.value(b.id()));
    if (t.requires_grad(b.id())) t.grad(b.id()) += g.cwiseProduct(t.value(a.id()));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, {a}, [a, s](Tape& t, int self) {
    t.grad(a.id()) += s * t.grad(self);
  });
}

Var add_rowwise(Var x, Var bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(), "add_rowwise",
          shape(x.value()) + " + " + shape(bias.value()));
  Tape& t = *x.tape();
  Matrix out = x.value();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {x, bias}, [x, bias](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(x.id())) t.grad(x.id()) += g;
    if (t.requires_grad(bias.id())) t.grad(bias.id()) += g.colwise().sum();
  });
}

Var affine_rowwise(Var x, const Eigen::RowVectorXd& scale, const Eigen::RowVectorXd& shift) {
  require(scale.size() == x.cols() && shift.size() == x.cols(), "affine_rowwise",
          shape(x.value()) + " with " + std::to_string(scale.size()) + " coefficients");
  Tape& t = *x.tape();
  Matrix out = x.value().array().rowwise() * scale.array();
  out.rowwise() += shift;
  return t.record(std::move(out), {x}, [x, scale](Tape& t, int self) {
    t.grad(x.id()).array() += t.grad(self).array().rowwise() * scale.array();
  });
}

Var elu(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(x.id()) += t.grad(self).binaryExpr(y, [](double g, double yv) { return yv > 0.0 ? g : g * (yv + 1.0); });
  });
}

Var sigmoid(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(x.id()) += t.grad(self).binaryExpr(y, [](double g, double s) { return g * s * (1.0 - s); });
  });
}

Var tanh(Var x) {
  Tape& t = *x.tape();
  Matrix out = x.value().array().tanh().matrix();
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(x.id()) += t.grad(self).binaryExpr(y, [](double g, double h) { return g * (1.0 - h * h); });
  });
}

Var sum(Var x) {
  Tape& t = *x.tape();
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return t.record(std::move(out), {x}, [x](Tape& t, int self) {
    t.grad(x.id()).array() += t.grad(self)(0, 0);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows", "column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index r = 0;
    for (const Var& p : parts) {
      const Eigen::Index n = t.value(p.id()).rows();
      if (t.requires_grad(p.id())) t.grad(p.id()) += g.middleRows(r, n);
      r += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index c = 0;
    for (const Var& p : parts) {
      const Eigen::Index n = t.value(p.id()).cols();
      if (t.requires_grad(p.id())) t.grad(p.id()) += g.middleCols(c, n);
      c += n;
    }
  });
}

Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows",
          "rows [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " + shape(x.value()));
  Tape& t = *x.tape();
  return t.record(x.value().middleRows(start, count), {x}, [x, start, count](Tape& t, int self) {
    t.grad(x.id()).middleRows(start, count) += t.grad(self);
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols",
          "cols [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " + shape(x.value()));
  Tape& t = *x.tape();
  return t.record(x.value().middleCols(start, count), {x}, [x, start, count](Tape& t, int self) {
    t.grad(x.id()).middleCols(start, count) += t.grad(self);
  });
}

Var flatten_blocks(Var x, Eigen::Index items, Eigen::Index block) {
  require(items * block == x.rows(), "flatten_blocks",
          shape(x.value()) + " is not " + std::to_string(items) + " blocks of " + std::to_string(block));
  Tape& t = *x.tape();
  const Eigen::Index c = x.cols();
  Matrix out(items, block * c);
  for (Eigen::Index i = 0; i < items; ++i) {
    Matrix b = x.value().middleRows(i * block, block);
    out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(b.data(), block * c);
  }
  return t.record(std::move(out), {x}, [x, items, block, c](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(x.id());
    for (Eigen::Index i = 0; i < items; ++i) {
      Eigen::RowVectorXd row = g.row(i);
      gx.middleRows(i * block, block) += Eigen::Map<const Matrix>(row.data(), block, c);
    }
  });
}

Var compose_pose(Var a, Var b) {
  require(a.rows() == 1 && a.cols() == 7 && b.rows() == 1 && b.cols() == 7, "compose_pose",
          shape(a.value()) + " o " + shape(b.value()));
  Tape& t = *a.tape();
  const RawPose ra = a.value().row(0).transpose();
  const RawPose rb = b.value().row(0).transpose();
  ComposeJacobians jac;
  const RawPose out = compose_raw(ra, rb, &jac);
  return t.record(Matrix(out.transpose()), {a, b}, [a, b, jac](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()) += g * jac.d_a;
    if (t.requires_grad(b.id())) t.grad(b.id()) += g * jac.d_b;
  });
}

Var inverse_pose(Var a) {
  require(a.rows() == 1 && a.cols() == 7, "inverse_pose", shape(a.value()));
  Tape& t = *a.tape();
  RawJacobian jac;
  const RawPose out = inverse_raw(a.value().row(0).transpose(), &jac);
  return t.record(Matrix(out.transpose()), {a}, [a, jac](Tape& t, int self) {
    t.grad(a.id()) += t.grad(self) * jac;
  });
}

}  // namespace ctcvo::ad
