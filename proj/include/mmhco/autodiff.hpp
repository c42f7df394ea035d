#pragma once

#include "mmhco/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmhco::ad {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter(std::string n, Tensor<T> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { std::fill(grad.data().begin(), grad.data().end(), T(0)); }
};

/// Owns parameters with stable addresses, kept in registration order.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  std::vector<Parameter<T>*> trainable();
  std::size_t count_values(bool trainable_only = true) const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Records a forward pass. Nodes are appended in topological order, so a
/// reverse sweep visits every consumer before its producers.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v);
  /// A leaf that receives a gradient but is not tied to a Parameter.
  Var<T> variable(Tensor<T> v);
  /// A parameter maps to a single leaf per tape, however often it is used.
  Var<T> param(Parameter<T>& p);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn);

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  void accumulate(int id, const Tensor<T>& g);
  void accumulate(int id, Tensor<T>&& g);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards; parameter leaves add
  /// their gradient into Parameter::grad. Safe to call repeatedly.
  void backward(Var<T> loss, bool retain_grads = false);
  /// Gradient held by a node after backward (retain_grads, or any leaf).
  const Tensor<T>* grad(Var<T> v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    Backward fn;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool leaf = false;
  };
  std::deque<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> param_nodes_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

// ---------------------------------------------------------------------------
// Differentiable operations

template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> a, T s);
template <class T>
Var<T> unary(UnaryOp op, Var<T> a);
template <class T>
Var<T> sigmoid(Var<T> a) { return unary(UnaryOp::sigmoid, a); }
template <class T>
Var<T> silu(Var<T> a) { return unary(UnaryOp::silu, a); }
template <class T>
Var<T> gelu(Var<T> a) { return unary(UnaryOp::gelu, a); }
template <class T>
Var<T> softplus(Var<T> a) { return unary(UnaryOp::softplus, a); }

/// x[..., K] * W[K, N] + b[N]
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

template <class T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> kernel, Conv2dGeom g);
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, Conv2dGeom g);
template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias);

template <class T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);
/// Training-mode batch normalization over (B,H,W) of x[B,C,H,W]. The batch
/// moments are written to the optional outputs for running-stat updates.
template <class T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, T eps, Tensor<T>* batch_mean = nullptr,
                   Tensor<T>* batch_var = nullptr);
/// Inference-mode batch normalization with fixed statistics.
template <class T>
Var<T> batchnorm2d_fixed(Var<T> x, const Tensor<T>& mean, const Tensor<T>& var, Var<T> gamma, Var<T> beta, T eps);

template <class T>
Var<T> reduce(ReduceOp op, Var<T> x, int axis);
template <class T>
Var<T> sum_all(Var<T> x);
template <class T>
Var<T> mean_all(Var<T> x);

template <class T>
Var<T> reshape(Var<T> x, Shape shape);
template <class T>
Var<T> permute(Var<T> x, std::vector<std::size_t> axes);
template <class T>
Var<T> slice(Var<T> x, int axis, std::size_t start, std::size_t length);
template <class T>
Var<T> concat(Var<T> a, Var<T> b, int axis);

/// x[N, ...rest] * d[...rest], d broadcast over the leading axis.
template <class T>
Var<T> mul_broadcast(Var<T> x, Var<T> d);
/// x[B, F] * w[B, 1].
template <class T>
Var<T> scale_rows(Var<T> x, Var<T> w);

template <class T>
Var<T> softmax(Var<T> x);

/// Mean over the batch of -log(max(softmax(logits)[label], eps)).
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<std::size_t>& labels, T eps = T(1e-12));
/// Per-class binary form over probabilities, averaged over classes then batch.
template <class T>
Var<T> binary_cross_entropy_probs(Var<T> probs, const std::vector<std::size_t>& labels, T eps = T(1e-12));

/// softmax((logits + noise) / tau). When `hard` the forward value is the one-hot
/// argmax while the backward pass uses the soft sample's Jacobian.
template <class T>
Var<T> gumbel_softmax(Var<T> logits, const Tensor<T>& noise, T tau, bool hard);

// ---------------------------------------------------------------------------
// Optimisation and checking

/// p <- p - lr * (grad + weight_decay * p) for trainable parameters, then zero grads.
template <class T>
void sgd_step(const std::vector<Parameter<T>*>& params, T lr, T weight_decay);

/// SGD with heavy-ball momentum: v <- mu*v + grad + wd*p, p <- p - lr*v.
/// With mu = 0 each step is exactly sgd_step.
template <class T>
class Sgd {
 public:
  Sgd(T lr, T weight_decay, T momentum) : lr_(lr), wd_(weight_decay), mu_(momentum) {}
  void step(const std::vector<Parameter<T>*>& params);
  T lr() const { return lr_; }

 private:
  T lr_, wd_, mu_;
  std::unordered_map<const Parameter<T>*, Tensor<T>> velocity_;
};

template <class T>
using LossFn = std::function<Var<T>(Tape<T>&)>;

struct FdOptions {
  /// 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

/// Max over checked coordinates of |analytic - central difference| / max(1, |analytic|).
template <class T>
double fd_check(const LossFn<T>& f, Parameter<T>& p, double h, FdOptions opts = {});

}  // namespace mmhco::ad
