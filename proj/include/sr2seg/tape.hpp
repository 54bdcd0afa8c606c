#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr2seg/tensor.hpp"

namespace sr2seg {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Named parameter tensors of one network, in registration order.
///
/// Registration happens once at network construction; afterwards the set is
/// frozen so references handed to a Tape stay valid.
template <class T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor<T> grad(value.shape());
    index_.emplace(name, params_.size());
    params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad)});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  Parameter<T>& at(const std::string& name) { return params_[lookup(name)]; }
  const Parameter<T>& at(const std::string& name) const { return params_[lookup(name)]; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_)
      for (T g : p.grad.vec()) s += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(s);
  }

  bool grads_finite() const {
    for (const auto& p : params_)
      if (!p.grad.all_finite()) return false;
    return true;
  }

  bool values_finite() const {
    for (const auto& p : params_)
      if (!p.value.all_finite()) return false;
    return true;
  }

  // FNV-1a over the raw bytes of every value tensor.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
      for (std::size_t i = 0; i < p.value.numel() * sizeof(T); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Fan-in scaled normal init: N(0, gain^2 / fan_in).
template <class T>
Tensor<T> fan_in_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.4142135623730951) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

struct VarId {
  std::size_t index = 0;
};

/// Reverse-mode recording of one forward pass.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// valid topological order. Parameter nodes alias the ParameterStore value and
/// accumulate straight into its grad tensor.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  VarId constant(Tensor<T> value) {
    auto n = std::make_unique<Node>();
    n->own_value = std::move(value);
    n->value = &n->own_value;
    return push(std::move(n));
  }

  VarId parameter(Parameter<T>& p) {
    auto n = std::make_unique<Node>();
    n->value = &p.value;
    n->requires_grad = grad_enabled_;
    n->external_grad = &p.grad;
    return push(std::move(n));
  }

  /// Records an op output. `fn` receives the gradient w.r.t. this output and
  /// must route it into the inputs through accumulate()/grad_buffer().
  VarId record(Tensor<T> value, std::initializer_list<VarId> inputs, BackwardFn fn) {
    auto n = std::make_unique<Node>();
    n->own_value = std::move(value);
    n->value = &n->own_value;
    if (grad_enabled_) {
      for (VarId in : inputs) n->requires_grad = n->requires_grad || nodes_.at(in.index)->requires_grad;
      if (n->requires_grad) n->backward = std::move(fn);
    }
    return push(std::move(n));
  }

  const Tensor<T>& value(VarId v) const { return *nodes_.at(v.index)->value; }
  bool requires_grad(VarId v) const { return nodes_.at(v.index)->requires_grad; }

  /// Gradient buffer of `v`, allocated (zeroed) on first use. Returns nullptr
  /// when no gradient flows into `v`.
  Tensor<T>* grad_buffer(VarId v) {
    Node& n = *nodes_.at(v.index);
    if (!n.requires_grad) return nullptr;
    if (n.external_grad) return n.external_grad;
    if (n.own_grad.empty()) n.own_grad = Tensor<T>(n.value->shape());
    return &n.own_grad;
  }

  void accumulate(VarId v, const Tensor<T>& g) {
    if (Tensor<T>* buf = grad_buffer(v)) *buf += g;
  }

  /// Gradient accumulated so far for a non-parameter node (empty if none).
  const Tensor<T>& grad(VarId v) const { return nodes_.at(v.index)->own_grad; }

  void backward(VarId loss, T seed = T{1}) {
    if (!grad_enabled_) throw std::logic_error("backward() on a tape recorded without gradients");
    if (value(loss).numel() != 1) throw std::invalid_argument("backward() needs a scalar loss");
    Tensor<T>* g = grad_buffer(loss);
    if (!g) return;
    (*g)[0] += seed;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = *nodes_[i];
      if (!n.backward || n.own_grad.empty()) continue;
      n.backward(*this, n.own_grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own_value;
    const Tensor<T>* value = nullptr;
    Tensor<T> own_grad;
    Tensor<T>* external_grad = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  VarId push(std::unique_ptr<Node> n) {
    nodes_.push_back(std::move(n));
    return VarId{nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace sr2seg
