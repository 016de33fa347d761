#include "ctcvo/parameters.hpp"

#include "ctcvo/errors.hpp"

namespace ctcvo {

int ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Kind kind) {
  if (index_.count(name)) throw ShapeMismatch("duplicate parameter block '" + name + "'");
  blocks_.push_back(Block{name, kind, Eigen::MatrixXd::Zero(rows, cols)});
  const int id = static_cast<int>(blocks_.size()) - 1;
  index_[name] = id;
  return id;
}

int ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

int ParameterSet::at(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw ShapeMismatch("no parameter block '" + name + "'");
  return i;
}

long long ParameterSet::scalar_count() const {
  long long n = 0;
  for (const auto& b : blocks_) n += b.value.size();
  return n;
}

long long ParameterSet::weight_count() const {
  long long n = 0;
  for (const auto& b : blocks_) {
    if (b.kind == Kind::Weight) n += b.value.size();
  }
  return n;
}

std::vector<int> ParameterSet::with_prefix(const std::string& prefix) const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (blocks_[i].name.rfind(prefix, 0) == 0) out.push_back(i);
  }
  return out;
}

void Gradients::add(const Gradients& other) {
  if (blocks.size() < other.blocks.size()) blocks.resize(other.blocks.size());
  for (std::size_t i = 0; i < other.blocks.size(); ++i) {
    if (other.blocks[i].size() == 0) continue;
    if (blocks[i].size() == 0) blocks[i] = other.blocks[i];
    else blocks[i] += other.blocks[i];
  }
}

void Gradients::scale(double s) {
  for (auto& b : blocks) b *= s;
}

double Gradients::squared_norm() const {
  double n = 0.0;
  for (const auto& b : blocks) n += b.squaredNorm();
  return n;
}

Graph::Graph(const ParameterSet& params, std::vector<bool> trainable)
    : params_(params), trainable_(std::move(trainable)), leaf_(params.size(), -1) {
  trainable_.resize(params.size(), false);
  for (int i = 0; i < params.size(); ++i) {
    if (params.block(i).kind == ParameterSet::Kind::Buffer) trainable_[i] = false;
  }
}

ad::Var Graph::param(int index) {
  if (leaf_[index] < 0) {
    ad::Var v = tape_.external(&params_.value(index), trainable_[index]);
    leaf_[index] = v.id();
    return v;
  }
  return tape_.handle(leaf_[index]);
}

void Graph::enable_calibration(ParameterSet* mutable_params, std::vector<std::string> prefixes) {
  calibration_target_ = mutable_params;
  calibration_prefixes_ = std::move(prefixes);
}

bool Graph::calibrating(const std::string& layer_name) const {
  if (!calibration_target_) return false;
  for (const auto& p : calibration_prefixes_) {
    if (layer_name.rfind(p, 0) == 0) return true;
  }
  return false;
}

void Graph::backward(ad::Var out, Gradients& grads) {
  tape_.backward(out);
  if (grads.blocks.size() < static_cast<std::size_t>(params_.size())) grads.blocks.resize(params_.size());
  for (int i = 0; i < params_.size(); ++i) {
    if (leaf_[i] < 0 || !trainable_[i] || !tape_.has_grad(leaf_[i])) continue;
    const Eigen::MatrixXd& g = tape_.grad_or_empty(leaf_[i]);
    if (grads.blocks[i].size() == 0) grads.blocks[i] = g;
    else grads.blocks[i] += g;
  }
}

}  // namespace ctcvo
