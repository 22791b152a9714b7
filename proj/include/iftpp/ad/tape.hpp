#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "iftpp/ad/tensor.hpp"

namespace iftpp::ad {

/// A trainable tensor together with its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;
};

/// Named parameters in deterministic (lexicographic) order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  /// Copies of every value, used for early-stopping snapshots.
  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& snap);

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

/// Handle to a node on a tape.  Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Inputs handed to a backward closure.  in_grads[i] is null when input i
/// does not require a gradient.
struct BackwardContext {
  const Tensor& out_value;
  const Tensor& out_grad;
  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Linear record of operations.  Nodes are appended in evaluation order, so
/// the node vector is already topologically sorted.
///
/// backward() may run once per recording; a second call throws until
/// clear() starts a new recording.
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (see grad()).
  Var variable(Tensor value);
  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var parameter(Parameter& param);

  Var record(std::string_view op, Tensor value, std::vector<Var> inputs,
             BackwardFn backward);

  void backward(const Var& loss);

  /// Adjoint of a node after backward(); zeros if it received none.
  Tensor grad(const Var& v) const;

  void clear();
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  const Tensor& value_of(std::size_t index) const { return nodes_[index].value; }
  bool requires_grad_of(std::size_t index) const { return nodes_[index].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace iftpp::ad
