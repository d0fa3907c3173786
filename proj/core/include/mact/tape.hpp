#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mact/errors.hpp"

namespace mact {

/// Value precision of a computation record. Gradient arithmetic is always
/// double; in f32 mode every forward value is rounded to single precision as
/// it is produced.
enum class Precision { f64, f32 };

using Shape = std::vector<int>;

inline int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

/// A named trainable (or frozen) array. Master values are double; the
/// precision mode of a tape only affects the values recorded on that tape.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool trainable = true;

  int size() const { return shape_size(shape); }
};

/// Initialization recipe, applied from (seed, parameter name) so results do
/// not depend on registration order.
struct InitSpec {
  enum class Kind { Zero, FanIn, LstmBias } kind = Kind::Zero;
  int fan_in = 0;        // FanIn: uniform with bound sqrt(3/fan_in)
  int hidden_size = 0;   // LstmBias: forget-gate slice set to 1
};

class ParameterStore {
 public:
  int add(std::string name, Shape shape, InitSpec init, bool trainable = true);

  void initialize(std::uint64_t seed);

  Parameter& at(int idx) { return params_[static_cast<size_t>(idx)]; }
  const Parameter& at(int idx) const { return params_[static_cast<size_t>(idx)]; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);

  int count() const { return static_cast<int>(params_.size()); }
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  std::int64_t trainable_scalar_count() const;
  std::int64_t scalar_count_with_prefix(const std::string& prefix) const;

  void zero_grads();

 private:
  std::vector<Parameter> params_;
  std::vector<InitSpec> inits_;
};

class Tape;

/// Handle to one node of a computation record.
class DiffArray {
 public:
  DiffArray() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  /// Returned by value: the tape's node storage may reallocate as later ops
  /// are recorded, which would dangle any reference into it.
  Shape shape() const;
  int size() const;
  std::span<const double> values() const;
  /// Gradient of the scalar that backward() was called on, with respect to
  /// this node. Zero-sized span until backward has touched this node.
  std::span<const double> grad() const;
  double scalar() const;

 private:
  friend class Tape;
  DiffArray(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only reverse-mode computation record. Node ids are already in
/// topological order, so the backward sweep visits each node exactly once.
class Tape {
 public:
  explicit Tape(Precision precision = Precision::f64) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const { return precision_; }

  DiffArray constant(Shape shape, std::vector<double> values, std::string op = "constant");
  DiffArray scalar_constant(double v);
  DiffArray leaf(Shape shape, std::span<const double> values, std::string op = "leaf");
  DiffArray zeros(Shape shape, std::string op = "zeros");
  /// Records the parameter as a differentiable leaf and remembers it so
  /// accumulate_parameter_grads() can scatter gradients back.
  DiffArray parameter(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the record in reverse.
  void backward(DiffArray loss);

  /// Adds leaf gradients into Parameter::grad, in registration order.
  void accumulate_parameter_grads();

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const std::string& op_name(int id) const { return nodes_[static_cast<size_t>(id)].op; }
  const Shape& node_shape(int id) const { return nodes_[static_cast<size_t>(id)].shape; }
  std::span<const double> node_values(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return {n.value.data(), n.value.size()};
  }

  /// Number of leaves recorded for the named parameter in this record.
  int parameter_leaf_count(const std::string& name) const;

  /// (leaf node id, parameter) pairs in recording order.
  const std::vector<std::pair<int, Parameter*>>& parameter_leaves() const {
    return param_leaves_;
  }

  /// Gradient of a node after backward(); empty when untouched.
  std::span<const double> node_grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return {n.grad.data(), n.grad.size()};
  }

  /// Id of the first node containing a non-finite value, or -1.
  int first_non_finite() const;

  // --- used by op implementations -----------------------------------------
  /// Backward callback: (tape, id of the node itself). Reads its own grad
  /// buffer and accumulates into parents' buffers.
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // lazily sized by grad_buffer()
    std::string op;
    BackwardFn backward;  // empty for leaves/constants
    bool needs_grad = false;
  };

  DiffArray emit(Shape shape, std::vector<double> value, std::string op,
                 bool needs_grad, BackwardFn backward);

  /// Gradient accumulation buffer for a node (allocated and zeroed on first
  /// use during the current backward sweep).
  std::span<double> grad_buffer(int id);
  bool grad_allocated(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }
  std::span<const double> value_of(int id) const { return node_values(id); }
  bool node_needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

 private:
  void round_to_precision(std::vector<double>& v) const;

  Precision precision_;
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> param_leaves_;
};

}  // namespace mact
