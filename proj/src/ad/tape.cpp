#include "iftpp/ad/tape.hpp"

#include <stdexcept>

namespace iftpp::ad {

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (params_.count(name) != 0) {
    throw std::invalid_argument("parameter '" + name + "' registered twice");
  }
  Tensor grad = Tensor::zeros_like(init);
  auto [it, _] = params_.emplace(name, Parameter{std::move(init), std::move(grad)});
  return it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

std::map<std::string, Tensor> ParameterStore::snapshot() const {
  std::map<std::string, Tensor> snap;
  for (const auto& [name, p] : params_) snap.emplace(name, p.value);
  return snap;
}

void ParameterStore::restore(const std::map<std::string, Tensor>& snap) {
  for (auto& [name, p] : params_) {
    auto it = snap.find(name);
    if (it == snap.end()) throw std::out_of_range("snapshot lacks parameter '" + name + "'");
    if (it->second.shape() != p.value.shape()) {
      throw ShapeError("snapshot shape mismatch for '" + name + "': " +
                       to_string(it->second.shape()) + " vs " + to_string(p.value.shape()));
    }
    p.value = it->second;
  }
}

const Tensor& Var::value() const { return tape_->value_of(index_); }
bool Var::requires_grad() const { return tape_->requires_grad_of(index_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param) {
  Node n;
  n.value = param.value;
  n.requires_grad = true;
  n.param = &param;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs,
                 BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite output of shape " +
                       to_string(value.shape()));
  }
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) {
      throw std::logic_error(std::string(op) + ": input recorded on a different tape");
    }
    n.inputs.push_back(in.index());
    n.requires_grad = n.requires_grad || nodes_[in.index()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  if (consumed_) {
    throw std::logic_error("backward: tape already differentiated; clear() before reuse");
  }
  const Node& root = nodes_.at(loss.index());
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
  }
  consumed_ = true;
  if (!root.requires_grad) return;

  Node& seed = nodes_[loss.index()];
  seed.grad = Tensor(seed.value.shape(), 1.0);
  seed.has_grad = true;

  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.param != nullptr) {
      auto dst = node.param->grad.values();
      auto src = node.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    if (!node.backward) continue;
    BackwardContext ctx{node.value, node.grad, {}, {}};
    ctx.in_values.reserve(node.inputs.size());
    ctx.in_grads.reserve(node.inputs.size());
    for (std::size_t in : node.inputs) {
      Node& input = nodes_[in];
      ctx.in_values.push_back(&input.value);
      if (input.requires_grad) {
        if (!input.has_grad) {
          input.grad = Tensor::zeros_like(input.value);
          input.has_grad = true;
        }
        ctx.in_grads.push_back(&input.grad);
      } else {
        ctx.in_grads.push_back(nullptr);
      }
    }
    node.backward(ctx);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_.at(v.index());
  return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
}

void Tape::clear() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace iftpp::ad
