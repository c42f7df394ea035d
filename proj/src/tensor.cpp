#include "mmhco/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmhco {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// outer x axis x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv stride must be positive");
  if (in + 2 * pad < k) {
    throw ShapeError("kernel of size " + std::to_string(k) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  return inv;
}

// ---------------------------------------------------------------------------
// Tensor

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape_));
  }
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

template <class T>
std::size_t Tensor<T>::dim(int axis) const {
  return shape_[norm_axis(axis, shape_.size())];
}

template <class T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) + " for shape " + shape_str(shape_));
  }
  std::size_t off = 0, i = 0;
  for (auto v : idx) {
    if (v >= shape_[i]) throw ShapeError("index out of range for shape " + shape_str(shape_));
    off = off * shape_[i] + v;
    ++i;
  }
  return off;
}

template <class T>
T Tensor<T>::at(std::initializer_list<std::size_t> idx) const {
  return data_[offset(idx)];
}
template <class T>
T& Tensor<T>::at(std::initializer_list<std::size_t> idx) {
  return data_[offset(idx)];
}

template <class T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <class T>
Tensor<T> Tensor<T>::reshape(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

template <class T>
Tensor<T> Tensor<T>::reshape(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
T apply_unary(UnaryOp op, T x) {
  switch (op) {
    case UnaryOp::neg: return -x;
    case UnaryOp::sigmoid:
      if (x >= 0) return T(1) / (T(1) + std::exp(-x));
      else {
        const T e = std::exp(x);
        return e / (T(1) + e);
      }
    case UnaryOp::silu: return x * apply_unary(UnaryOp::sigmoid, x);
    case UnaryOp::gelu: {
      const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
      return T(0.5) * x * (T(1) + std::tanh(inner));
    }
    case UnaryOp::exp: return std::exp(x);
    case UnaryOp::log: return std::log(x);
    case UnaryOp::softplus: return x > T(20) ? x : std::log1p(std::exp(x));
    case UnaryOp::tanh: return std::tanh(x);
    case UnaryOp::square: return x * x;
    case UnaryOp::sqrt: return std::sqrt(x);
  }
  return x;
}

template <class T>
T unary_derivative(UnaryOp op, T x) {
  switch (op) {
    case UnaryOp::neg: return T(-1);
    case UnaryOp::sigmoid: {
      const T s = apply_unary(UnaryOp::sigmoid, x);
      return s * (T(1) - s);
    }
    case UnaryOp::silu: {
      const T s = apply_unary(UnaryOp::sigmoid, x);
      return s * (T(1) + x * (T(1) - s));
    }
    case UnaryOp::gelu: {
      const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
      const T th = std::tanh(inner);
      const T dinner = T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
      return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
    }
    case UnaryOp::exp: return std::exp(x);
    case UnaryOp::log: return T(1) / x;
    case UnaryOp::softplus: return apply_unary(UnaryOp::sigmoid, x);
    case UnaryOp::tanh: {
      const T t = std::tanh(x);
      return T(1) - t * t;
    }
    case UnaryOp::square: return T(2) * x;
    case UnaryOp::sqrt: return T(0.5) / std::sqrt(x);
  }
  return T(0);
}

template <class T>
Tensor<T> unary(UnaryOp op, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const T* src = a.ptr();
  T* dst = out.ptr();
  const std::size_t n = a.size();
  switch (op) {
    case UnaryOp::neg:
      for (std::size_t i = 0; i < n; ++i) dst[i] = -src[i];
      break;
    case UnaryOp::square:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] * src[i];
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) dst[i] = apply_unary(op, src[i]);
  }
  return out;
}

template <class T>
Tensor<T> binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(a_scalar ? b.shape() : a.shape());
  const std::size_t n = out.size();
  T* o = out.ptr();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  auto run = [&](auto f) {
    if (a_scalar) {
      const T s = pa[0];
      for (std::size_t i = 0; i < n; ++i) o[i] = f(s, pb[i]);
    } else if (b_scalar) {
      const T s = pb[0];
      for (std::size_t i = 0; i < n; ++i) o[i] = f(pa[i], s);
    } else {
      for (std::size_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
    }
  };
  switch (op) {
    case BinaryOp::add: run([](T x, T y) { return x + y; }); break;
    case BinaryOp::sub: run([](T x, T y) { return x - y; }); break;
    case BinaryOp::mul: run([](T x, T y) { return x * y; }); break;
    case BinaryOp::div: run([](T x, T y) { return x / y; }); break;
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <class T>
void axpy_inplace(Tensor<T>& y, T alpha, const Tensor<T>& x) {
  if (y.size() != x.size()) {
    throw ShapeError("axpy shape mismatch: " + shape_str(y.shape()) + " vs " + shape_str(x.shape()));
  }
  T* py = y.ptr();
  const T* px = x.ptr();
  for (std::size_t i = 0; i < y.size(); ++i) py[i] += alpha * px[i];
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  for (T v : a.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <class T>
void check_finite(const Tensor<T>& a, const std::string& what) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) {
      throw std::runtime_error(what + ": non-finite value at flat index " + std::to_string(i) + " of " +
                               shape_str(a.shape()));
    }
  }
}

template <class T>
T sum_all(const Tensor<T>& a) {
  // accumulate in double
  double s = 0;
  for (T v : a.data()) s += v;
  return static_cast<T>(s);
}

template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) throw ShapeError("dot size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return static_cast<T>(s);
}

template <class T>
T l2_norm(const Tensor<T>& a) {
  return std::sqrt(dot(a, a));
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " +
                     shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  Tensor<T> out(Shape{m, n});
  MapC<T> A(a.ptr(), a.dim(0), a.dim(1));
  MapC<T> B(b.ptr(), b.dim(0), b.dim(1));
  MapM<T> C(out.ptr(), m, n);
  if (!trans_a && !trans_b) C.noalias() = A * B;
  else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();
  return out;
}

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, bool trans_a, const T* b, bool trans_b, T* c,
          bool accumulate) {
  MapM<T> C(c, m, n);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate) C.noalias() += A * B;
    else C.noalias() = A * B;
  };
  if (!trans_a && !trans_b) run(MapC<T>(a, m, k), MapC<T>(b, k, n));
  else if (trans_a && !trans_b) run(MapC<T>(a, k, m).transpose(), MapC<T>(b, k, n));
  else if (!trans_a && trans_b) run(MapC<T>(a, m, k), MapC<T>(b, n, k).transpose());
  else run(MapC<T>(a, k, m).transpose(), MapC<T>(b, n, k).transpose());
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || x.rank() == 0 || x.dim(-1) != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  const std::size_t cout = w.dim(1);
  if (b.size() != cout) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t rows = x.size() / w.dim(0);
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  Tensor<T> out(out_shape);
  MapC<T> X(x.ptr(), rows, w.dim(0));
  MapC<T> W(w.ptr(), w.dim(0), cout);
  MapM<T> Y(out.ptr(), rows, cout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b.ptr(), cout);
  Y.noalias() = X * W;
  Y.rowwise() += bias;
  return out;
}

// ---------------------------------------------------------------------------
// Depthwise convolution

namespace {

void check_conv_input(const Shape& x, const char* what) {
  if (x.size() != 4) throw ShapeError(std::string(what) + " expects [B,C,H,W], got " + shape_str(x));
}

// Range of output columns ox for which ix = ox*s + kx - p lies in [0, W).
inline void valid_range(std::size_t out_w, std::size_t in_w, std::size_t s, std::size_t kx, std::size_t p,
                        std::size_t& lo, std::size_t& hi) {
  // ix >= 0  <=> ox*s >= p - kx
  lo = 0;
  if (p > kx) lo = (p - kx + s - 1) / s;
  // ix <= in_w - 1  <=> ox*s <= in_w - 1 + p - kx
  const long long lim = static_cast<long long>(in_w) - 1 + static_cast<long long>(p) - static_cast<long long>(kx);
  if (lim < 0) {
    hi = 0;
    return;
  }
  hi = std::min<std::size_t>(out_w, static_cast<std::size_t>(lim) / s + 1);
  if (hi < lo) hi = lo;
}

}  // namespace

template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, Conv2dGeom g) {
  check_conv_input(x.shape(), "depthwise_conv2d");
  if (kernel.rank() != 3 || kernel.dim(0) != x.dim(1)) {
    throw ShapeError("depthwise_conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t kh = kernel.dim(1), kw = kernel.dim(2);
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("depthwise_conv2d: kernel sizes must be odd");
  const std::size_t OH = conv_out_size(H, kh, g.stride, g.padding);
  const std::size_t OW = conv_out_size(W, kw, g.stride, g.padding);
  const std::size_t s = g.stride, p = g.padding;
  Tensor<T> out(Shape{B, C, OH, OW});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* in = x.ptr() + (b * C + c) * H * W;
      T* o = out.ptr() + (b * C + c) * OH * OW;
      const T* k = kernel.ptr() + c * kh * kw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const T wv = k[ky * kw + kx];
          std::size_t lo, hi;
          valid_range(OW, W, s, kx, p, lo, hi);
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const long long iy = static_cast<long long>(oy * s + ky) - static_cast<long long>(p);
            if (iy < 0 || iy >= static_cast<long long>(H)) continue;
            const T* row = in + static_cast<std::size_t>(iy) * W;
            T* orow = o + oy * OW;
            if (s == 1) {
              const T* src = row + kx - p;  // valid for ox in [lo, hi)
              for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox * s + kx - p];
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor<T> depthwise_conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                                      const Shape& input_shape, Conv2dGeom g) {
  const std::size_t B = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const std::size_t kh = kernel.dim(1), kw = kernel.dim(2);
  const std::size_t OH = grad_out.dim(2), OW = grad_out.dim(3);
  const std::size_t s = g.stride, p = g.padding;
  Tensor<T> gin(input_shape);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      T* gi = gin.ptr() + (b * C + c) * H * W;
      const T* go = grad_out.ptr() + (b * C + c) * OH * OW;
      const T* k = kernel.ptr() + c * kh * kw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const T wv = k[ky * kw + kx];
          std::size_t lo, hi;
          valid_range(OW, W, s, kx, p, lo, hi);
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const long long iy = static_cast<long long>(oy * s + ky) - static_cast<long long>(p);
            if (iy < 0 || iy >= static_cast<long long>(H)) continue;
            T* row = gi + static_cast<std::size_t>(iy) * W;
            const T* grow = go + oy * OW;
            for (std::size_t ox = lo; ox < hi; ++ox) row[ox * s + kx - p] += wv * grow[ox];
          }
        }
      }
    }
  }
  return gin;
}

template <class T>
Tensor<T> depthwise_conv2d_grad_kernel(const Tensor<T>& grad_out, const Tensor<T>& x, const Shape& kernel_shape,
                                       Conv2dGeom g) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t kh = kernel_shape[1], kw = kernel_shape[2];
  const std::size_t OH = grad_out.dim(2), OW = grad_out.dim(3);
  const std::size_t s = g.stride, p = g.padding;
  Tensor<T> gk(kernel_shape);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        std::size_t lo, hi;
        valid_range(OW, W, s, kx, p, lo, hi);
        T acc = 0;
        for (std::size_t b = 0; b < B; ++b) {
          const T* in = x.ptr() + (b * C + c) * H * W;
          const T* go = grad_out.ptr() + (b * C + c) * OH * OW;
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const long long iy = static_cast<long long>(oy * s + ky) - static_cast<long long>(p);
            if (iy < 0 || iy >= static_cast<long long>(H)) continue;
            const T* row = in + static_cast<std::size_t>(iy) * W;
            const T* grow = go + oy * OW;
            for (std::size_t ox = lo; ox < hi; ++ox) acc += grow[ox] * row[ox * s + kx - p];
          }
        }
        gk[(c * kh + ky) * kw + kx] = acc;
      }
    }
  }
  return gk;
}

// ---------------------------------------------------------------------------
// Dense convolution via im2col

namespace {

template <class T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t OH, std::size_t OW, Conv2dGeom g, T* cols) {
  const std::size_t s = g.stride, p = g.padding;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* dst = cols + ((c * kh + ky) * kw + kx) * OH * OW;
        std::size_t lo, hi;
        valid_range(OW, W, s, kx, p, lo, hi);
        for (std::size_t oy = 0; oy < OH; ++oy) {
          T* drow = dst + oy * OW;
          const long long iy = static_cast<long long>(oy * s + ky) - static_cast<long long>(p);
          if (iy < 0 || iy >= static_cast<long long>(H)) {
            std::fill(drow, drow + OW, T(0));
            continue;
          }
          const T* srow = img + (c * H + static_cast<std::size_t>(iy)) * W;
          std::fill(drow, drow + lo, T(0));
          for (std::size_t ox = lo; ox < hi; ++ox) drow[ox] = srow[ox * s + kx - p];
          std::fill(drow + hi, drow + OW, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t OH, std::size_t OW, Conv2dGeom g, T* img) {
  const std::size_t s = g.stride, p = g.padding;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* src = cols + ((c * kh + ky) * kw + kx) * OH * OW;
        std::size_t lo, hi;
        valid_range(OW, W, s, kx, p, lo, hi);
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const long long iy = static_cast<long long>(oy * s + ky) - static_cast<long long>(p);
          if (iy < 0 || iy >= static_cast<long long>(H)) continue;
          T* drow = img + (c * H + static_cast<std::size_t>(iy)) * W;
          const T* srow = src + oy * OW;
          for (std::size_t ox = lo; ox < hi; ++ox) drow[ox * s + kx - p] += srow[ox];
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeom g) {
  check_conv_input(x.shape(), "conv2d");
  if (weight.rank() != 4 || weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t OH = conv_out_size(H, kh, g.stride, g.padding);
  const std::size_t OW = conv_out_size(W, kw, g.stride, g.padding);
  if (bias.size() != Cout) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(Cout) +
                     " output channels");
  }
  const std::size_t K = Cin * kh * kw, P = OH * OW;
  Tensor<T> out(Shape{B, Cout, OH, OW});
  std::vector<T> cols(K * P);
  MapC<T> Wm(weight.ptr(), Cout, K);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.ptr() + b * Cin * H * W, Cin, H, W, kh, kw, OH, OW, g, cols.data());
    MapC<T> Cm(cols.data(), K, P);
    MapM<T> Om(out.ptr() + b * Cout * P, Cout, P);
    Om.noalias() = Wm * Cm;
    for (std::size_t o = 0; o < Cout; ++o) Om.row(o).array() += bias[o];
  }
  return out;
}

template <class T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const Shape& input_shape,
                            Conv2dGeom g) {
  const std::size_t B = input_shape[0], Cin = input_shape[1], H = input_shape[2], W = input_shape[3];
  const std::size_t Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t OH = grad_out.dim(2), OW = grad_out.dim(3);
  const std::size_t K = Cin * kh * kw, P = OH * OW;
  Tensor<T> gin(input_shape);
  std::vector<T> cols(K * P);
  MapC<T> Wm(weight.ptr(), Cout, K);
  for (std::size_t b = 0; b < B; ++b) {
    MapC<T> Go(grad_out.ptr() + b * Cout * P, Cout, P);
    MapM<T> Cm(cols.data(), K, P);
    Cm.noalias() = Wm.transpose() * Go;
    col2im(cols.data(), Cin, H, W, kh, kw, OH, OW, g, gin.ptr() + b * Cin * H * W);
  }
  return gin;
}

template <class T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& x, const Shape& weight_shape,
                             Conv2dGeom g) {
  const std::size_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = weight_shape[0], kh = weight_shape[2], kw = weight_shape[3];
  const std::size_t OH = grad_out.dim(2), OW = grad_out.dim(3);
  const std::size_t K = Cin * kh * kw, P = OH * OW;
  Tensor<T> gw(weight_shape);
  std::vector<T> cols(K * P);
  MapM<T> Gw(gw.ptr(), Cout, K);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.ptr() + b * Cin * H * W, Cin, H, W, kh, kw, OH, OW, g, cols.data());
    MapC<T> Cm(cols.data(), K, P);
    MapC<T> Go(grad_out.ptr() + b * Cout * P, Cout, P);
    Gw.noalias() += Go * Cm.transpose();
  }
  return gw;
}

template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  check_conv_input(x.shape(), "add_channel_bias");
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  if (bias.size() != C) throw ShapeError("channel bias " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
  Tensor<T> out = x;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      T* o = out.ptr() + (b * C + c) * P;
      const T bv = bias[c];
      for (std::size_t i = 0; i < P; ++i) o[i] += bv;
    }
  return out;
}

template <class T>
Tensor<T> channel_sum(const Tensor<T>& x) {
  check_conv_input(x.shape(), "channel_sum");
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{C});
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* p = x.ptr() + (b * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) acc += p[i];
    }
    out[c] = static_cast<T>(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("layernorm: eps must be > 0");
  if (x.rank() == 0) throw ShapeError("layernorm on a rank-0 tensor");
  const std::size_t C = x.dim(-1);
  if (gamma.size() != C || beta.size() != C) {
    throw ShapeError("layernorm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " vs input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / C;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * C;
    T* o = out.ptr() + r * C;
    T mean = 0;
    for (std::size_t i = 0; i < C; ++i) mean += in[i];
    mean /= T(C);
    T var = 0;
    for (std::size_t i = 0; i < C; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= T(C);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < C; ++i) o[i] = (in[i] - mean) * inv * gamma[i] + beta[i];
  }
  return out;
}

template <class T>
void channel_moments(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var) {
  check_conv_input(x.shape(), "channel_moments");
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  mean = Tensor<T>(Shape{C});
  var = Tensor<T>(Shape{C});
  const double n = static_cast<double>(B * P);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* p = x.ptr() + (b * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) s += p[i];
    }
    const double m = s / n;
    double v = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* p = x.ptr() + (b * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) v += (p[i] - m) * (p[i] - m);
    }
    mean[c] = static_cast<T>(m);
    var[c] = static_cast<T>(v / n);
  }
}

template <class T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& var, const Tensor<T>& gamma,
                          const Tensor<T>& beta, T eps) {
  check_conv_input(x.shape(), "batchnorm");
  if (!(eps > T(0))) throw std::invalid_argument("batchnorm: eps must be > 0");
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  if (mean.size() != C || var.size() != C || gamma.size() != C || beta.size() != C) {
    throw ShapeError("batchnorm: channel parameters do not match input " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T a = gamma[c] / std::sqrt(var[c] + eps);
    const T sh = beta[c] - mean[c] * a;
    for (std::size_t b = 0; b < B; ++b) {
      const T* p = x.ptr() + (b * C + c) * P;
      T* o = out.ptr() + (b * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) o[i] = p[i] * a + sh;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shaping

template <class T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != ax) out_shape.push_back(x.shape()[i]);
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const T* base = x.ptr() + o * sp.len * sp.inner + in;
      T r = 0;
      switch (op) {
        case ReduceOp::sum:
        case ReduceOp::mean: {
          double acc = 0;
          for (std::size_t k = 0; k < sp.len; ++k) acc += base[k * sp.inner];
          r = static_cast<T>(op == ReduceOp::mean ? acc / static_cast<double>(sp.len) : acc);
          break;
        }
        case ReduceOp::max:
        case ReduceOp::argmax: {
          std::size_t best = 0;
          for (std::size_t k = 1; k < sp.len; ++k)
            if (base[k * sp.inner] > base[best * sp.inner]) best = k;
          r = op == ReduceOp::max ? base[best * sp.inner] : static_cast<T>(best);
          break;
        }
      }
      out[o * sp.inner + in] = r;
    }
  }
  return out;
}

template <class T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("argmax_rows expects 2-D, got " + shape_str(x.shape()));
  const std::size_t R = x.dim(0), C = x.dim(1);
  std::vector<std::size_t> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* row = x.ptr() + r * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    out[r] = best;
  }
  return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw ShapeError("permute: invalid axis list");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[axes[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  // stride in the input for each output axis
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) st[i] = in_strides[axes[i]];
  Tensor<T> out(out_shape);
  if (r == 0) {
    out[0] = x[0];
    return out;
  }
  const std::size_t last = out_shape[r - 1];
  const std::size_t last_stride = st[r - 1];
  const std::size_t rows = out.size() / last;
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  T* dst = out.ptr();
  const T* in = x.ptr();
  for (std::size_t row = 0; row < rows; ++row) {
    for (std::size_t j = 0; j < last; ++j) dst[j] = in[src + j * last_stride];
    dst += last;
    // advance multi-index over all but the last axis
    for (std::size_t a = r - 1; a-- > 0;) {
      if (++idx[a] < out_shape[a]) {
        src += st[a];
        break;
      }
      src -= st[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
  return out;
}

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis) {
  if (a.rank() != b.rank()) throw ShapeError("concat rank mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t ax = norm_axis(axis, a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != ax && a.shape()[i] != b.shape()[i]) {
      throw ShapeError("concat shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[ax] += b.shape()[ax];
  const AxisSplit sa = split_at(a.shape(), ax), sb = split_at(b.shape(), ax);
  Tensor<T> out(out_shape);
  const std::size_t ca = sa.len * sa.inner, cb = sb.len * sb.inner;
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(a.ptr() + o * ca, ca, out.ptr() + o * (ca + cb));
    std::copy_n(b.ptr() + o * cb, cb, out.ptr() + o * (ca + cb) + ca);
  }
  return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = norm_axis(axis, x.rank());
  if (length == 0 || start + length > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x.ptr() + (o * sp.len + start) * sp.inner, length * sp.inner, out.ptr() + o * length * sp.inner);
  }
  return out;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax on rank-0 tensor");
  const std::size_t C = x.dim(-1), rows = x.size() / C;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * C;
    T* o = out.ptr() + r * C;
    const T m = *std::max_element(in, in + C);
    T s = 0;
    for (std::size_t i = 0; i < C; ++i) {
      o[i] = std::exp(in[i] - m);
      s += o[i];
    }
    for (std::size_t i = 0; i < C; ++i) o[i] /= s;
  }
  return out;
}

// ---------------------------------------------------------------------------

#define MMHCO_INSTANTIATE(T)                                                                              \
  template class Tensor<T>;                                                                               \
  template T apply_unary<T>(UnaryOp, T);                                                                  \
  template T unary_derivative<T>(UnaryOp, T);                                                             \
  template Tensor<T> unary<T>(UnaryOp, const Tensor<T>&);                                                 \
  template Tensor<T> binary<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                       \
  template void axpy_inplace<T>(Tensor<T>&, T, const Tensor<T>&);                                         \
  template bool all_finite<T>(const Tensor<T>&);                                                          \
  template void check_finite<T>(const Tensor<T>&, const std::string&);                                    \
  template T sum_all<T>(const Tensor<T>&);                                                                \
  template T dot<T>(const Tensor<T>&, const Tensor<T>&);                                                  \
  template T l2_norm<T>(const Tensor<T>&);                                                                \
  template T max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                           \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, bool, const T*, bool, T*, bool);   \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> depthwise_conv2d<T>(const Tensor<T>&, const Tensor<T>&, Conv2dGeom);                 \
  template Tensor<T> depthwise_conv2d_grad_input<T>(const Tensor<T>&, const Tensor<T>&, const Shape&,     \
                                                    Conv2dGeom);                                          \
  template Tensor<T> depthwise_conv2d_grad_kernel<T>(const Tensor<T>&, const Tensor<T>&, const Shape&,    \
                                                     Conv2dGeom);                                         \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeom);         \
  template Tensor<T> conv2d_grad_input<T>(const Tensor<T>&, const Tensor<T>&, const Shape&, Conv2dGeom);  \
  template Tensor<T> conv2d_grad_weight<T>(const Tensor<T>&, const Tensor<T>&, const Shape&, Conv2dGeom); \
  template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> channel_sum<T>(const Tensor<T>&);                                                    \
  template Tensor<T> layernorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> batchnorm_apply<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                        const Tensor<T>&, const Tensor<T>&, T);                           \
  template void channel_moments<T>(const Tensor<T>&, Tensor<T>&, Tensor<T>&);                             \
  template Tensor<T> reduce<T>(ReduceOp, const Tensor<T>&, int);                                          \
  template std::vector<std::size_t> argmax_rows<T>(const Tensor<T>&);                                     \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                       \
  template Tensor<T> concat<T>(const Tensor<T>&, const Tensor<T>&, int);                                  \
  template Tensor<T> slice<T>(const Tensor<T>&, int, std::size_t, std::size_t);                           \
  template Tensor<T> softmax<T>(const Tensor<T>&);

MMHCO_INSTANTIATE(float)
MMHCO_INSTANTIATE(double)

#undef MMHCO_INSTANTIATE

}  // namespace mmhco
