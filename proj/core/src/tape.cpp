#include "mact/tape.hpp"

#include <algorithm>
#include <cmath>

#include "mact/rng.hpp"

namespace mact {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// --- ParameterStore ---------------------------------------------------------

int ParameterStore::add(std::string name, Shape shape, InitSpec init, bool trainable) {
  if (find(name) != nullptr) {
    throw config_error("duplicate parameter name: " + name);
  }
  Parameter p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.value.assign(static_cast<size_t>(p.size()), 0.0);
  p.grad.assign(static_cast<size_t>(p.size()), 0.0);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  inits_.push_back(init);
  return static_cast<int>(params_.size()) - 1;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (Parameter& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParameterStore::initialize(std::uint64_t seed) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_[i];
    const InitSpec& init = inits_[i];
    Rng rng(mix_seed(seed, p.name));
    switch (init.kind) {
      case InitSpec::Kind::Zero:
        std::fill(p.value.begin(), p.value.end(), 0.0);
        break;
      case InitSpec::Kind::FanIn: {
        const double bound = std::sqrt(3.0 / static_cast<double>(std::max(1, init.fan_in)));
        for (double& v : p.value) v = rng.uniform(-bound, bound);
        break;
      }
      case InitSpec::Kind::LstmBias: {
        std::fill(p.value.begin(), p.value.end(), 0.0);
        const int h = init.hidden_size;
        for (int j = h; j < 2 * h; ++j) p.value[static_cast<size_t>(j)] = 1.0;
        break;
      }
    }
  }
}

std::int64_t ParameterStore::trainable_scalar_count() const {
  std::int64_t n = 0;
  for (const Parameter& p : params_) {
    if (p.trainable) n += p.size();
  }
  return n;
}

std::int64_t ParameterStore::scalar_count_with_prefix(const std::string& prefix) const {
  std::int64_t n = 0;
  for (const Parameter& p : params_) {
    if (p.trainable && p.name.rfind(prefix, 0) == 0) n += p.size();
  }
  return n;
}

void ParameterStore::zero_grads() {
  for (Parameter& p : params_) {
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
}

// --- DiffArray ---------------------------------------------------------------

Shape DiffArray::shape() const { return tape_->node_shape(id_); }
int DiffArray::size() const { return shape_size(shape()); }
std::span<const double> DiffArray::values() const { return tape_->node_values(id_); }

std::span<const double> DiffArray::grad() const {
  if (!tape_->grad_allocated(id_)) return {};
  return tape_->grad_buffer(id_);
}

double DiffArray::scalar() const {
  if (size() != 1) throw shape_error("scalar() on array of shape " + shape_str(shape()));
  return values()[0];
}

// --- Tape --------------------------------------------------------------------

void Tape::round_to_precision(std::vector<double>& v) const {
  if (precision_ == Precision::f32) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  }
}

DiffArray Tape::emit(Shape shape, std::vector<double> value, std::string op,
                     bool needs_grad, BackwardFn backward) {
  if (static_cast<int>(value.size()) != shape_size(shape)) {
    throw shape_error("emit: value size does not match shape " + shape_str(shape) +
                      " in op " + op);
  }
  round_to_precision(value);
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.op = std::move(op);
  n.backward = std::move(backward);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return DiffArray(this, static_cast<int>(nodes_.size()) - 1);
}

DiffArray Tape::constant(Shape shape, std::vector<double> values, std::string op) {
  return emit(std::move(shape), std::move(values), std::move(op), false, {});
}

DiffArray Tape::scalar_constant(double v) { return constant({1}, {v}, "scalar"); }

DiffArray Tape::leaf(Shape shape, std::span<const double> values, std::string op) {
  return emit(std::move(shape), std::vector<double>(values.begin(), values.end()),
              std::move(op), true, {});
}

DiffArray Tape::zeros(Shape shape, std::string op) {
  std::vector<double> v(static_cast<size_t>(shape_size(shape)), 0.0);
  return emit(std::move(shape), std::move(v), std::move(op), false, {});
}

DiffArray Tape::parameter(Parameter& p) {
  DiffArray a = leaf(p.shape, {p.value.data(), p.value.size()}, "param:" + p.name);
  param_leaves_.emplace_back(a.id(), &p);
  return a;
}

std::span<double> Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return {n.grad.data(), n.grad.size()};
}

void Tape::backward(DiffArray loss) {
  if (loss.tape() != this) throw validation_error("backward: node from another tape");
  if (loss.size() != 1) {
    throw shape_error("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  grad_buffer(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

void Tape::accumulate_parameter_grads() {
  for (auto& [id, param] : param_leaves_) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) continue;
    for (size_t i = 0; i < n.grad.size(); ++i) param->grad[i] += n.grad[i];
  }
}

int Tape::parameter_leaf_count(const std::string& name) const {
  int count = 0;
  for (const auto& [id, param] : param_leaves_) {
    if (param->name == name) ++count;
  }
  return count;
}

int Tape::first_non_finite() const {
  for (size_t id = 0; id < nodes_.size(); ++id) {
    for (double v : nodes_[id].value) {
      if (!std::isfinite(v)) return static_cast<int>(id);
    }
  }
  return -1;
}

}  // namespace mact
