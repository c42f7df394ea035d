#include "mmhco/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mmhco::ad {

// ---------------------------------------------------------------------------
// ParameterStore

template <class T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value), trainable));
  return *params_.back();
}

template <class T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

template <class T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

template <class T>
std::vector<Parameter<T>*> ParameterStore<T>::all() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::vector<const Parameter<T>*> ParameterStore<T>::all() const {
  std::vector<const Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::vector<Parameter<T>*> ParameterStore<T>::trainable() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_)
    if (p->trainable) out.push_back(p.get());
  return out;
}

template <class T>
std::size_t ParameterStore<T>::count_values(bool trainable_only) const {
  std::size_t n = 0;
  for (auto& p : params_)
    if (!trainable_only || p->trainable) n += p->value.size();
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Tape

template <class T>
Var<T> Tape<T>::constant(Tensor<T> v) {
  Node n;
  n.value = std::move(v);
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::variable(Tensor<T> v) {
  Node n;
  n.value = std::move(v);
  n.leaf = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.leaf = true;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_[&p] = id;
  return {this, id};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
  bool rg = false;
  for (const auto& v : inputs) {
    if (v.tape != this) throw std::logic_error("operation mixes variables from different tapes");
    rg = rg || requires_grad(v.id);
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <class T>
void Tape<T>::accumulate(int id, const Tensor<T>& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value " + shape_str(n.value.shape()));
  }
  if (!n.grad) n.grad = g;
  else axpy_inplace(*n.grad, T(1), g);
}

template <class T>
void Tape<T>::accumulate(int id, Tensor<T>&& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value " + shape_str(n.value.shape()));
  }
  if (!n.grad) n.grad = std::move(g);
  else axpy_inplace(*n.grad, T(1), g);
}

template <class T>
void Tape<T>::backward(Var<T> loss, bool retain_grads) {
  if (loss.tape != this) throw std::logic_error("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(value(loss.id).shape()));
  }
  for (auto& n : nodes_) n.grad.reset();
  Node& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (!root.requires_grad) return;
  root.grad = Tensor<T>(root.value.shape(), T(1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad) continue;
    if (n.fn) n.fn(*this, *n.grad);
    if (n.param != nullptr) axpy_inplace(n.param->grad, T(1), *n.grad);
    if (!retain_grads && !n.leaf) n.grad.reset();
  }
}

template <class T>
const Tensor<T>* Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.grad ? &*n.grad : nullptr;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "add");
  const int ai = a.id, bi = b.id;
  return a.tape->record(mmhco::add(a.value(), b.value()), {a, b}, [ai, bi](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ai, g);
    t.accumulate(bi, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "sub");
  const int ai = a.id, bi = b.id;
  return a.tape->record(mmhco::sub(a.value(), b.value()), {a, b}, [ai, bi](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ai, g);
    if (t.requires_grad(bi)) t.accumulate(bi, mmhco::scale(g, T(-1)));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.value(), b.value(), "mul");
  const int ai = a.id, bi = b.id;
  return a.tape->record(mmhco::mul(a.value(), b.value()), {a, b}, [ai, bi](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ai)) t.accumulate(ai, mmhco::mul(g, t.value(bi)));
    if (t.requires_grad(bi)) t.accumulate(bi, mmhco::mul(g, t.value(ai)));
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  const int ai = a.id;
  return a.tape->record(mmhco::scale(a.value(), s), {a},
                        [ai, s](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ai, mmhco::scale(g, s)); });
}

template <class T>
Var<T> unary(UnaryOp op, Var<T> a) {
  const int ai = a.id;
  return a.tape->record(mmhco::unary(op, a.value()), {a}, [ai, op](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(ai);
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = g[i] * unary_derivative(op, x[i]);
    t.accumulate(ai, std::move(gx));
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  const int xi = x.id, wi = w.id, bi = b.id;
  return x.tape->record(mmhco::linear(x.value(), w.value(), b.value()), {x, w, b},
                        [xi, wi, bi](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T>& X = t.value(xi);
                          const Tensor<T>& W = t.value(wi);
                          const std::size_t cin = W.dim(0), cout = W.dim(1), rows = X.size() / cin;
                          if (t.requires_grad(xi)) {
                            Tensor<T> gx(X.shape());
                            gemm(rows, cin, cout, g.ptr(), false, W.ptr(), true, gx.ptr(), false);
                            t.accumulate(xi, std::move(gx));
                          }
                          if (t.requires_grad(wi)) {
                            Tensor<T> gw(W.shape());
                            gemm(cin, cout, rows, X.ptr(), true, g.ptr(), false, gw.ptr(), false);
                            t.accumulate(wi, std::move(gw));
                          }
                          if (t.requires_grad(bi)) {
                            Tensor<T> gb(Shape{cout});
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* row = g.ptr() + r * cout;
                              for (std::size_t c = 0; c < cout; ++c) gb[c] += row[c];
                            }
                            t.accumulate(bi, std::move(gb));
                          }
                        });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const int ai = a.id, bi = b.id;
  return a.tape->record(mmhco::matmul(a.value(), b.value()), {a, b}, [ai, bi](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ai)) t.accumulate(ai, mmhco::matmul(g, t.value(bi), false, true));
    if (t.requires_grad(bi)) t.accumulate(bi, mmhco::matmul(t.value(ai), g, true, false));
  });
}

template <class T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> kernel, Conv2dGeom geom) {
  const int xi = x.id, ki = kernel.id;
  return x.tape->record(mmhco::depthwise_conv2d(x.value(), kernel.value(), geom), {x, kernel},
                        [xi, ki, geom](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T>& X = t.value(xi);
                          const Tensor<T>& K = t.value(ki);
                          if (t.requires_grad(xi))
                            t.accumulate(xi, depthwise_conv2d_grad_input(g, K, X.shape(), geom));
                          if (t.requires_grad(ki))
                            t.accumulate(ki, depthwise_conv2d_grad_kernel(g, X, K.shape(), geom));
                        });
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, Conv2dGeom geom) {
  const int xi = x.id, wi = weight.id, bi = bias.id;
  return x.tape->record(mmhco::conv2d(x.value(), weight.value(), bias.value(), geom), {x, weight, bias},
                        [xi, wi, bi, geom](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T>& X = t.value(xi);
                          const Tensor<T>& Wt = t.value(wi);
                          if (t.requires_grad(xi)) t.accumulate(xi, conv2d_grad_input(g, Wt, X.shape(), geom));
                          if (t.requires_grad(wi)) t.accumulate(wi, conv2d_grad_weight(g, X, Wt.shape(), geom));
                          if (t.requires_grad(bi)) t.accumulate(bi, channel_sum(g));
                        });
}

template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  const int xi = x.id, bi = bias.id;
  return x.tape->record(mmhco::add_channel_bias(x.value(), bias.value()), {x, bias},
                        [xi, bi](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(xi, g);
                          if (t.requires_grad(bi)) t.accumulate(bi, channel_sum(g));
                        });
}

template <class T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->record(
      mmhco::layernorm(x.value(), gamma.value(), beta.value(), eps), {x, gamma, beta},
      [xi, gi, bi, eps](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& X = t.value(xi);
        const Tensor<T>& G = t.value(gi);
        const std::size_t C = X.dim(-1), rows = X.size() / C;
        Tensor<T> gx(X.shape()), gg(G.shape()), gb(G.shape());
        std::vector<T> xhat(C), gxh(C);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* in = X.ptr() + r * C;
          const T* go = g.ptr() + r * C;
          T mean = 0;
          for (std::size_t i = 0; i < C; ++i) mean += in[i];
          mean /= T(C);
          T var = 0;
          for (std::size_t i = 0; i < C; ++i) var += (in[i] - mean) * (in[i] - mean);
          var /= T(C);
          const T inv = T(1) / std::sqrt(var + eps);
          T s1 = 0, s2 = 0;
          for (std::size_t i = 0; i < C; ++i) {
            xhat[i] = (in[i] - mean) * inv;
            gxh[i] = go[i] * G[i];
            s1 += gxh[i];
            s2 += gxh[i] * xhat[i];
            gg[i] += go[i] * xhat[i];
            gb[i] += go[i];
          }
          T* o = gx.ptr() + r * C;
          for (std::size_t i = 0; i < C; ++i) o[i] = inv / T(C) * (T(C) * gxh[i] - s1 - xhat[i] * s2);
        }
        t.accumulate(xi, std::move(gx));
        t.accumulate(gi, std::move(gg));
        t.accumulate(bi, std::move(gb));
      });
}

template <class T>
Var<T> batchnorm2d(Var<T> x, Var<T> gamma, Var<T> beta, T eps, Tensor<T>* batch_mean, Tensor<T>* batch_var) {
  Tensor<T> mean, var;
  channel_moments(x.value(), mean, var);
  Tensor<T> y = batchnorm_apply(x.value(), mean, var, gamma.value(), beta.value(), eps);
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [xi, gi, bi, eps, mean = std::move(mean), var = std::move(var)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& X = t.value(xi);
        const Tensor<T>& G = t.value(gi);
        const std::size_t B = X.dim(0), C = X.dim(1), P = X.dim(2) * X.dim(3);
        const T n = T(B * P);
        Tensor<T> gx(X.shape()), gg(Shape{C}), gb(Shape{C});
        for (std::size_t c = 0; c < C; ++c) {
          const T inv = T(1) / std::sqrt(var[c] + eps);
          T s1 = 0, s2 = 0;
          for (std::size_t b = 0; b < B; ++b) {
            const T* in = X.ptr() + (b * C + c) * P;
            const T* go = g.ptr() + (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
              s1 += go[i];
              s2 += go[i] * (in[i] - mean[c]) * inv;
            }
          }
          gg[c] = s2;
          gb[c] = s1;
          const T a = G[c] * inv / n;
          for (std::size_t b = 0; b < B; ++b) {
            const T* in = X.ptr() + (b * C + c) * P;
            const T* go = g.ptr() + (b * C + c) * P;
            T* o = gx.ptr() + (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) o[i] = a * (n * go[i] - s1 - (in[i] - mean[c]) * inv * s2);
          }
        }
        t.accumulate(xi, std::move(gx));
        t.accumulate(gi, std::move(gg));
        t.accumulate(bi, std::move(gb));
      });
}

template <class T>
Var<T> batchnorm2d_fixed(Var<T> x, const Tensor<T>& mean, const Tensor<T>& var, Var<T> gamma, Var<T> beta, T eps) {
  Tensor<T> y = batchnorm_apply(x.value(), mean, var, gamma.value(), beta.value(), eps);
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->record(std::move(y), {x, gamma, beta}, [xi, gi, bi, eps, mean, var](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& X = t.value(xi);
    const Tensor<T>& G = t.value(gi);
    const std::size_t B = X.dim(0), C = X.dim(1), P = X.dim(2) * X.dim(3);
    Tensor<T> gx(X.shape()), gg(Shape{C}), gb(Shape{C});
    for (std::size_t c = 0; c < C; ++c) {
      const T inv = T(1) / std::sqrt(var[c] + eps);
      for (std::size_t b = 0; b < B; ++b) {
        const T* in = X.ptr() + (b * C + c) * P;
        const T* go = g.ptr() + (b * C + c) * P;
        T* o = gx.ptr() + (b * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) {
          o[i] = go[i] * G[c] * inv;
          gg[c] += go[i] * (in[i] - mean[c]) * inv;
          gb[c] += go[i];
        }
      }
    }
    t.accumulate(xi, std::move(gx));
    t.accumulate(gi, std::move(gg));
    t.accumulate(bi, std::move(gb));
  });
}

template <class T>
Var<T> reduce(ReduceOp op, Var<T> x, int axis) {
  if (op != ReduceOp::mean && op != ReduceOp::sum) {
    throw std::invalid_argument("only mean and sum reductions are differentiable");
  }
  const int xi = x.id;
  const int r = static_cast<int>(x.value().rank());
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + r : axis);
  return x.tape->record(mmhco::reduce(op, x.value(), axis), {x}, [xi, op, ax](Tape<T>& t, const Tensor<T>& g) {
    const Shape& s = t.value(xi).shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[ax];
    const T f = op == ReduceOp::mean ? T(1) / T(len) : T(1);
    Tensor<T> gx(s);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k) {
        T* dst = gx.ptr() + (o * len + k) * inner;
        const T* src = g.ptr() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] = src[i] * f;
      }
    t.accumulate(xi, std::move(gx));
  });
}

template <class T>
Var<T> sum_all(Var<T> x) {
  const int xi = x.id;
  return x.tape->record(Tensor<T>::scalar(mmhco::sum_all(x.value())), {x}, [xi](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(xi, Tensor<T>(t.value(xi).shape(), g[0]));
  });
}

template <class T>
Var<T> mean_all(Var<T> x) {
  return scale(sum_all(x), T(1) / T(x.value().size()));
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  const int xi = x.id;
  return x.tape->record(x.value().reshape(std::move(shape)), {x}, [xi](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(xi, g.reshape(t.value(xi).shape()));
  });
}

template <class T>
Var<T> permute(Var<T> x, std::vector<std::size_t> axes) {
  const int xi = x.id;
  Tensor<T> y = mmhco::permute(x.value(), axes);
  return x.tape->record(std::move(y), {x}, [xi, inv = inverse_permutation(axes)](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(xi, mmhco::permute(g, inv));
  });
}

template <class T>
Var<T> slice(Var<T> x, int axis, std::size_t start, std::size_t length) {
  const int xi = x.id;
  const int r = static_cast<int>(x.value().rank());
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + r : axis);
  return x.tape->record(mmhco::slice(x.value(), axis, start, length), {x},
                        [xi, ax, start, length](Tape<T>& t, const Tensor<T>& g) {
                          const Shape& s = t.value(xi).shape();
                          std::size_t outer = 1, inner = 1;
                          for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
                          for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
                          Tensor<T> gx(s);
                          for (std::size_t o = 0; o < outer; ++o)
                            std::copy_n(g.ptr() + o * length * inner, length * inner,
                                        gx.ptr() + (o * s[ax] + start) * inner);
                          t.accumulate(xi, std::move(gx));
                        });
}

template <class T>
Var<T> concat(Var<T> a, Var<T> b, int axis) {
  const int ai = a.id, bi = b.id;
  const std::size_t la = a.value().dim(axis), lb = b.value().dim(axis);
  return a.tape->record(mmhco::concat(a.value(), b.value(), axis), {a, b},
                        [ai, bi, axis, la, lb](Tape<T>& t, const Tensor<T>& g) {
                          if (t.requires_grad(ai)) t.accumulate(ai, mmhco::slice(g, axis, 0, la));
                          if (t.requires_grad(bi)) t.accumulate(bi, mmhco::slice(g, axis, la, lb));
                        });
}

template <class T>
Var<T> mul_broadcast(Var<T> x, Var<T> d) {
  const Tensor<T>& X = x.value();
  const Tensor<T>& D = d.value();
  if (X.rank() != D.rank() + 1 || !std::equal(D.shape().begin(), D.shape().end(), X.shape().begin() + 1)) {
    throw ShapeError("mul_broadcast: " + shape_str(D.shape()) + " is not the trailing shape of " + shape_str(X.shape()));
  }
  const std::size_t N = X.dim(0), M = D.size();
  Tensor<T> y(X.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* in = X.ptr() + n * M;
    T* o = y.ptr() + n * M;
    for (std::size_t i = 0; i < M; ++i) o[i] = in[i] * D[i];
  }
  const int xi = x.id, di = d.id;
  return x.tape->record(std::move(y), {x, d}, [xi, di, N, M](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& Xv = t.value(xi);
    const Tensor<T>& Dv = t.value(di);
    if (t.requires_grad(xi)) {
      Tensor<T> gx(Xv.shape());
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < M; ++i) gx[n * M + i] = g[n * M + i] * Dv[i];
      t.accumulate(xi, std::move(gx));
    }
    if (t.requires_grad(di)) {
      Tensor<T> gd(Dv.shape());
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < M; ++i) gd[i] += g[n * M + i] * Xv[n * M + i];
      t.accumulate(di, std::move(gd));
    }
  });
}

template <class T>
Var<T> scale_rows(Var<T> x, Var<T> w) {
  const Tensor<T>& X = x.value();
  const Tensor<T>& Wv = w.value();
  if (X.rank() != 2 || Wv.rank() != 2 || Wv.dim(0) != X.dim(0) || Wv.dim(1) != 1) {
    throw ShapeError("scale_rows: " + shape_str(X.shape()) + " with weights " + shape_str(Wv.shape()));
  }
  const std::size_t B = X.dim(0), F = X.dim(1);
  Tensor<T> y(X.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) y[b * F + f] = X[b * F + f] * Wv[b];
  const int xi = x.id, wi = w.id;
  return x.tape->record(std::move(y), {x, w}, [xi, wi, B, F](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& Xv = t.value(xi);
    const Tensor<T>& Wt = t.value(wi);
    if (t.requires_grad(xi)) {
      Tensor<T> gx(Xv.shape());
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < F; ++f) gx[b * F + f] = g[b * F + f] * Wt[b];
      t.accumulate(xi, std::move(gx));
    }
    if (t.requires_grad(wi)) {
      Tensor<T> gw(Wt.shape());
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < F; ++f) gw[b] += g[b * F + f] * Xv[b * F + f];
      t.accumulate(wi, std::move(gw));
    }
  });
}

namespace {

// y = softmax output, g = upstream; returns y * (g - <g, y>) per row, times `factor`.
template <class T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& g, T factor) {
  const std::size_t C = y.dim(-1), rows = y.size() / C;
  Tensor<T> gx(y.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y.ptr() + r * C;
    const T* gr = g.ptr() + r * C;
    T s = 0;
    for (std::size_t i = 0; i < C; ++i) s += gr[i] * yr[i];
    for (std::size_t i = 0; i < C; ++i) gx[r * C + i] = factor * yr[i] * (gr[i] - s);
  }
  return gx;
}

}  // namespace

template <class T>
Var<T> softmax(Var<T> x) {
  const int xi = x.id;
  Tensor<T> y = mmhco::softmax(x.value());
  return x.tape->record(y, {x}, [xi, y](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(xi, softmax_backward(y, g, T(1)));
  });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<std::size_t>& labels, T eps) {
  const Tensor<T>& L = logits.value();
  if (L.rank() != 2 || labels.size() != L.dim(0)) {
    throw ShapeError("cross entropy: logits " + shape_str(L.shape()) + " with " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t B = L.dim(0), C = L.dim(1);
  for (auto y : labels)
    if (y >= C) throw std::invalid_argument("label " + std::to_string(y) + " out of range for " + std::to_string(C) + " classes");
  Tensor<T> p = mmhco::softmax(L);
  double loss = 0;
  for (std::size_t b = 0; b < B; ++b) loss -= std::log(std::max(p[b * C + labels[b]], eps));
  loss /= static_cast<double>(B);
  const int li = logits.id;
  return logits.tape->record(Tensor<T>::scalar(static_cast<T>(loss)), {logits},
                             [li, p = std::move(p), labels, eps, B, C](Tape<T>& t, const Tensor<T>& g) {
                               Tensor<T> gl(p.shape());
                               const T f = g[0] / T(B);
                               for (std::size_t b = 0; b < B; ++b) {
                                 if (p[b * C + labels[b]] < eps) continue;  // clamped: flat
                                 for (std::size_t c = 0; c < C; ++c)
                                   gl[b * C + c] = f * (p[b * C + c] - (c == labels[b] ? T(1) : T(0)));
                               }
                               t.accumulate(li, std::move(gl));
                             });
}

template <class T>
Var<T> binary_cross_entropy_probs(Var<T> probs, const std::vector<std::size_t>& labels, T eps) {
  const Tensor<T>& P = probs.value();
  if (P.rank() != 2 || labels.size() != P.dim(0)) {
    throw ShapeError("binary cross entropy: probs " + shape_str(P.shape()) + " with " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t B = P.dim(0), C = P.dim(1);
  for (auto y : labels)
    if (y >= C) throw std::invalid_argument("label out of range");
  double loss = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T p = P[b * C + c];
      loss -= c == labels[b] ? std::log(std::max(p, eps)) : std::log(std::max(T(1) - p, eps));
    }
  loss /= static_cast<double>(B * C);
  const int pi = probs.id;
  return probs.tape->record(Tensor<T>::scalar(static_cast<T>(loss)), {probs},
                            [pi, labels, eps, B, C](Tape<T>& t, const Tensor<T>& g) {
                              const Tensor<T>& Pv = t.value(pi);
                              Tensor<T> gp(Pv.shape());
                              const T f = g[0] / T(B * C);
                              for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t c = 0; c < C; ++c) {
                                  const T p = Pv[b * C + c];
                                  if (c == labels[b]) gp[b * C + c] = p >= eps ? -f / p : T(0);
                                  else gp[b * C + c] = (T(1) - p) >= eps ? f / (T(1) - p) : T(0);
                                }
                              t.accumulate(pi, std::move(gp));
                            });
}

template <class T>
Var<T> gumbel_softmax(Var<T> logits, const Tensor<T>& noise, T tau, bool hard) {
  if (!(tau > T(0))) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  const Tensor<T>& L = logits.value();
  if (noise.shape() != L.shape()) {
    throw ShapeError("gumbel_softmax: noise " + shape_str(noise.shape()) + " vs logits " + shape_str(L.shape()));
  }
  Tensor<T> z(L.shape());
  for (std::size_t i = 0; i < L.size(); ++i) z[i] = (L[i] + noise[i]) / tau;
  Tensor<T> soft = mmhco::softmax(z);
  Tensor<T> out = soft;
  if (hard) {
    const std::size_t C = L.dim(-1), rows = L.size() / C;
    std::fill(out.data().begin(), out.data().end(), T(0));
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (soft[r * C + c] > soft[r * C + best]) best = c;
      out[r * C + best] = T(1);
    }
  }
  const int li = logits.id;
  return logits.tape->record(std::move(out), {logits}, [li, soft = std::move(soft), tau](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(li, softmax_backward(soft, g, T(1) / tau));
  });
}

// ---------------------------------------------------------------------------

template <class T>
void sgd_step(const std::vector<Parameter<T>*>& params, T lr, T weight_decay) {
  for (Parameter<T>* p : params) {
    if (p->trainable) {
      T* v = p->value.ptr();
      const T* g = p->grad.ptr();
      for (std::size_t i = 0; i < p->value.size(); ++i) v[i] -= lr * (g[i] + weight_decay * v[i]);
    }
    p->zero_grad();
  }
}

template <class T>
void Sgd<T>::step(const std::vector<Parameter<T>*>& params) {
  if (mu_ == T(0)) {
    sgd_step(params, lr_, wd_);
    return;
  }
  for (Parameter<T>* p : params) {
    if (p->trainable) {
      auto it = velocity_.find(p);
      if (it == velocity_.end()) it = velocity_.emplace(p, Tensor<T>(p->value.shape())).first;
      T* v = p->value.ptr();
      T* m = it->second.ptr();
      const T* g = p->grad.ptr();
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        m[i] = mu_ * m[i] + g[i] + wd_ * v[i];
        v[i] -= lr_ * m[i];
      }
    }
    p->zero_grad();
  }
}

template <class T>
double fd_check(const LossFn<T>& f, Parameter<T>& p, double h, FdOptions opts) {
  if (!(h > 0)) throw std::invalid_argument("fd_check: step h must be positive");
  p.zero_grad();
  {
    Tape<T> tape;
    Var<T> loss = f(tape);
    tape.backward(loss);
  }
  const Tensor<T> analytic = p.grad;
  p.zero_grad();

  std::vector<std::size_t> coords(p.value.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (opts.max_coords > 0 && opts.max_coords < coords.size()) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  auto eval = [&]() {
    Tape<T> tape;
    return static_cast<double>(f(tape).value().item());
  };

  double worst = 0;
  for (std::size_t i : coords) {
    const T orig = p.value[i];
    const T plus = static_cast<T>(orig + h);
    const T minus = static_cast<T>(orig - h);
    p.value[i] = plus;
    const double fp = eval();
    p.value[i] = minus;
    const double fm = eval();
    p.value[i] = orig;
    const double numeric = (fp - fm) / (static_cast<double>(plus) - static_cast<double>(minus));
    const double a = analytic[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
  }
  return worst;
}

// ---------------------------------------------------------------------------

#define MMHCO_AD_INSTANTIATE(T)                                                                               \
  template class ParameterStore<T>;                                                                           \
  template class Tape<T>;                                                                                     \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                     \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                     \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                     \
  template Var<T> scale<T>(Var<T>, T);                                                                        \
  template Var<T> unary<T>(UnaryOp, Var<T>);                                                                  \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                                          \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                                  \
  template Var<T> depthwise_conv2d<T>(Var<T>, Var<T>, Conv2dGeom);                                            \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, Conv2dGeom);                                              \
  template Var<T> add_channel_bias<T>(Var<T>, Var<T>);                                                        \
  template Var<T> layernorm<T>(Var<T>, Var<T>, Var<T>, T);                                                    \
  template Var<T> batchnorm2d<T>(Var<T>, Var<T>, Var<T>, T, Tensor<T>*, Tensor<T>*);                          \
  template Var<T> batchnorm2d_fixed<T>(Var<T>, const Tensor<T>&, const Tensor<T>&, Var<T>, Var<T>, T);        \
  template Var<T> reduce<T>(ReduceOp, Var<T>, int);                                                           \
  template Var<T> sum_all<T>(Var<T>);                                                                         \
  template Var<T> mean_all<T>(Var<T>);                                                                        \
  template Var<T> reshape<T>(Var<T>, Shape);                                                                  \
  template Var<T> permute<T>(Var<T>, std::vector<std::size_t>);                                               \
  template Var<T> slice<T>(Var<T>, int, std::size_t, std::size_t);                                            \
  template Var<T> concat<T>(Var<T>, Var<T>, int);                                                             \
  template Var<T> mul_broadcast<T>(Var<T>, Var<T>);                                                           \
  template Var<T> scale_rows<T>(Var<T>, Var<T>);                                                              \
  template Var<T> softmax<T>(Var<T>);                                                                         \
  template Var<T> softmax_cross_entropy<T>(Var<T>, const std::vector<std::size_t>&, T);                       \
  template Var<T> binary_cross_entropy_probs<T>(Var<T>, const std::vector<std::size_t>&, T);                  \
  template Var<T> gumbel_softmax<T>(Var<T>, const Tensor<T>&, T, bool);                                       \
  template void sgd_step<T>(const std::vector<Parameter<T>*>&, T, T);                                         \
  template class Sgd<T>;                                                                                      \
  template double fd_check<T>(const LossFn<T>&, Parameter<T>&, double, FdOptions);

MMHCO_AD_INSTANTIATE(float)
MMHCO_AD_INSTANTIATE(double)

#undef MMHCO_AD_INSTANTIATE

}  // namespace mmhco::ad
