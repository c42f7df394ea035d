#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmhco {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

const char* dtype_name(DType d);

/// Thrown for shape/precondition violations. The message names the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major array. A rank-0 tensor (empty shape) holds one value.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T(0)) {}
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor from(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  /// Negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T at(std::initializer_list<std::size_t> idx) const;
  T& at(std::initializer_list<std::size_t> idx);

  /// Value of a single-element tensor.
  T item() const;

  Tensor reshape(Shape shape) const&;
  Tensor reshape(Shape shape) &&;

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<T> data_;
};

template <class T>
Tensor<T> zeros(Shape shape) { return Tensor<T>(std::move(shape), T(0)); }
template <class T>
Tensor<T> ones(Shape shape) { return Tensor<T>(std::move(shape), T(1)); }
template <class T>
Tensor<T> full(Shape shape, T v) { return Tensor<T>(std::move(shape), v); }

// ---------------------------------------------------------------------------
// Elementwise

enum class UnaryOp { neg, sigmoid, silu, gelu, exp, log, softplus, tanh, square, sqrt };
enum class BinaryOp { add, sub, mul, div };

template <class T>
T apply_unary(UnaryOp op, T x);
/// d op(x) / dx evaluated at x.
template <class T>
T unary_derivative(UnaryOp op, T x);

template <class T>
Tensor<T> unary(UnaryOp op, const Tensor<T>& a);
/// Shapes must match exactly unless one operand has a single element.
template <class T>
Tensor<T> binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryOp::add, a, b); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryOp::sub, a, b); }
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryOp::mul, a, b); }
template <class T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <class T>
void axpy_inplace(Tensor<T>& y, T alpha, const Tensor<T>& x);

/// Flags the first non-finite value. Returns true when every value is finite.
template <class T>
bool all_finite(const Tensor<T>& a);
template <class T>
void check_finite(const Tensor<T>& a, const std::string& what);

template <class T>
T sum_all(const Tensor<T>& a);
template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
T l2_norm(const Tensor<T>& a);
template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// ---------------------------------------------------------------------------
// Linear algebra

/// C = op(A) * op(B) with op = transpose when the flag is set. 2-D only.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

/// Row-major raw GEMM: C (m x n) = op(A) * op(B), or C += ... when `accumulate`.
/// A is stored as (m x k) or, transposed, (k x m); likewise B.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, bool trans_a, const T* b, bool trans_b, T* c,
          bool accumulate);

/// Affine map over the last dimension: x[..., Cin] * W[Cin, Cout] + b[Cout].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// ---------------------------------------------------------------------------
// Convolution (NCHW)

struct Conv2dGeom {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

/// Per-channel spatial convolution. x[B,C,H,W], kernel[C,kh,kw]; no channel mixing.
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, Conv2dGeom g);
template <class T>
Tensor<T> depthwise_conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                                      const Shape& input_shape, Conv2dGeom g);
template <class T>
Tensor<T> depthwise_conv2d_grad_kernel(const Tensor<T>& grad_out, const Tensor<T>& x,
                                       const Shape& kernel_shape, Conv2dGeom g);

/// Dense convolution. x[B,Cin,H,W], weight[Cout,Cin,kh,kw], bias[Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeom g);
template <class T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const Shape& input_shape,
                            Conv2dGeom g);
template <class T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& x, const Shape& weight_shape,
                             Conv2dGeom g);

/// Adds bias[C] to every (b, c, :, :) plane.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// Sum of grad over all axes except 1 (NCHW channel).
template <class T>
Tensor<T> channel_sum(const Tensor<T>& x);

// ---------------------------------------------------------------------------
// Normalization

/// Normalizes over the last dimension, then applies gamma/beta. eps must be > 0.
template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Normalizes each channel of x[B,C,H,W] with the supplied statistics.
template <class T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& var,
                          const Tensor<T>& gamma, const Tensor<T>& beta, T eps);
/// Per-channel biased mean and variance of x[B,C,H,W].
template <class T>
void channel_moments(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var);

// ---------------------------------------------------------------------------
// Reductions and shaping

enum class ReduceOp { mean, sum, max, argmax };

/// Reduces one axis away. argmax returns indices (as values of T); ties go to the lowest index.
template <class T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, int axis);
/// Row-wise argmax over the last axis of a 2-D tensor.
template <class T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& x);

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis);
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length);
/// Softmax over the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& x);

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes);

}  // namespace mmhco
