#include "mmhco/spectral.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace mmhco::spectral {

template <class T>
const Tensor<T>& dct_matrix(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, Tensor<T>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  if (n == 0) throw ShapeError("dct of length 0");
  Tensor<T> d(Shape{n, n});
  const double N = static_cast<double>(n);
  for (std::size_t u = 0; u < n; ++u) {
    const double s = u == 0 ? std::sqrt(1.0 / N) : std::sqrt(2.0 / N);
    for (std::size_t i = 0; i < n; ++i) {
      d[u * n + i] = static_cast<T>(s * std::cos(std::numbers::pi * (2.0 * i + 1.0) * u / (2.0 * N)));
    }
  }
  return cache.emplace(n, std::move(d)).first->second;
}

template <class T>
FrequencyGrid<T> make_grid(std::size_t H, std::size_t W) {
  if (H == 0 || W == 0) throw ShapeError("frequency grid needs positive sizes");
  FrequencyGrid<T> g;
  g.H = H;
  g.W = W;
  g.omega_x = Tensor<T>(Shape{H});
  g.omega_y = Tensor<T>(Shape{W});
  for (std::size_t h = 0; h < H; ++h) g.omega_x[h] = static_cast<T>(std::numbers::pi * h / H);
  for (std::size_t w = 0; w < W; ++w) g.omega_y[w] = static_cast<T>(std::numbers::pi * w / W);
  return g;
}

template <class T>
Tensor<T> frequency_energy(const FrequencyGrid<T>& grid) {
  Tensor<T> e(Shape{grid.H, grid.W});
  for (std::size_t h = 0; h < grid.H; ++h)
    for (std::size_t w = 0; w < grid.W; ++w)
      e[h * grid.W + w] = grid.omega_x[h] * grid.omega_x[h] + grid.omega_y[w] * grid.omega_y[w];
  return e;
}

template <class T>
DecayMatrix<T> build_decay(const FrequencyGrid<T>& grid, const Tensor<T>& k, T t) {
  if (!(t > T(0))) throw std::invalid_argument("diffusion time t must be positive");
  if (k.rank() != 3 || k.dim(1) != grid.H || k.dim(2) != grid.W) {
    throw ShapeError("diffusivity " + shape_str(k.shape()) + " does not match grid " + std::to_string(grid.H) + "x" +
                     std::to_string(grid.W));
  }
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (!(k[i] >= T(0))) throw std::invalid_argument("diffusivity must be non-negative (index " + std::to_string(i) + ")");
  }
  const Tensor<T> e = frequency_energy(grid);
  const std::size_t C = k.dim(0), P = grid.H * grid.W;
  DecayMatrix<T> d;
  d.k = k;
  d.t = t;
  d.values = Tensor<T>(k.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < P; ++i) d.values[c * P + i] = std::exp(-k[c * P + i] * e[i] * t);
  return d;
}

namespace {

template <class T>
void check_spatial(const Tensor<T>& x, const char* what) {
  if (x.rank() < 2) throw ShapeError(std::string(what) + " needs at least 2 axes, got " + shape_str(x.shape()));
}

// inverse=false: Y = D_H X D_W^T; inverse=true: X = D_H^T Y D_W
template <class T>
Tensor<T> separable(const Tensor<T>& x, bool inverse) {
  const std::size_t H = x.dim(-2), W = x.dim(-1), HW = H * W;
  const std::size_t M = x.size() / HW;
  const Tensor<T>& DH = dct_matrix<T>(H);
  const Tensor<T>& DW = dct_matrix<T>(W);
  Tensor<T> tmp(x.shape());
  Tensor<T> out(x.shape());
  // along W: rows of length W
  gemm(M * H, W, W, x.ptr(), false, DW.ptr(), !inverse, tmp.ptr(), false);
  // along H: per slice
  for (std::size_t m = 0; m < M; ++m) {
    gemm(H, W, H, DH.ptr(), inverse, tmp.ptr() + m * HW, false, out.ptr() + m * HW, false);
  }
  return out;
}

template <class T>
Tensor<T> separable_channels_last(const Tensor<T>& x, bool inverse) {
  if (x.rank() != 4) throw ShapeError("channels-last dct expects [N,H,W,C], got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const Tensor<T>& DH = dct_matrix<T>(H);
  const Tensor<T>& DW = dct_matrix<T>(W);
  Tensor<T> tmp(x.shape());
  Tensor<T> out(x.shape());
  const std::size_t WC = W * C;
  for (std::size_t n = 0; n < N; ++n) {
    // along H: (H x H) * (H x WC)
    gemm(H, WC, H, DH.ptr(), inverse, x.ptr() + n * H * WC, false, tmp.ptr() + n * H * WC, false);
    // along W: per row h, (W x W) * (W x C)
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = (n * H + h) * WC;
      gemm(W, C, W, DW.ptr(), inverse, tmp.ptr() + off, false, out.ptr() + off, false);
    }
  }
  return out;
}

}  // namespace

template <class T>
Tensor<T> dct2(const Tensor<T>& x) {
  check_spatial(x, "dct2");
  return separable(x, false);
}

template <class T>
Tensor<T> idct2(const Tensor<T>& x) {
  check_spatial(x, "idct2");
  return separable(x, true);
}

template <class T>
Tensor<T> dct2_channels_last(const Tensor<T>& x) {
  return separable_channels_last(x, false);
}

template <class T>
Tensor<T> idct2_channels_last(const Tensor<T>& x) {
  return separable_channels_last(x, true);
}

template <class T>
Tensor<T> hco_forward(const Tensor<T>& u0, const DecayMatrix<T>& decay) {
  if (u0.rank() != 4) throw ShapeError("hco_forward expects [B,C,H,W], got " + shape_str(u0.shape()));
  const Shape& ds = decay.values.shape();
  if (ds.size() != 3 || ds[0] != u0.dim(1) || ds[1] != u0.dim(2) || ds[2] != u0.dim(3)) {
    throw ShapeError("decay " + shape_str(ds) + " does not match input " + shape_str(u0.shape()));
  }
  Tensor<T> f = dct2(u0);
  const std::size_t B = u0.dim(0), M = decay.values.size();
  for (std::size_t b = 0; b < B; ++b) {
    T* p = f.ptr() + b * M;
    for (std::size_t i = 0; i < M; ++i) p[i] *= decay.values[i];
  }
  return idct2(f);
}

// ---------------------------------------------------------------------------

template <class T>
ad::Var<T> dct2(ad::Var<T> x) {
  const int xi = x.id;
  return x.tape->record(dct2(x.value()), {x},
                        [xi](ad::Tape<T>& t, const Tensor<T>& g) { t.accumulate(xi, idct2(g)); });
}

template <class T>
ad::Var<T> idct2(ad::Var<T> x) {
  const int xi = x.id;
  return x.tape->record(idct2(x.value()), {x},
                        [xi](ad::Tape<T>& t, const Tensor<T>& g) { t.accumulate(xi, dct2(g)); });
}

template <class T>
ad::Var<T> dct2_channels_last(ad::Var<T> x) {
  const int xi = x.id;
  return x.tape->record(dct2_channels_last(x.value()), {x}, [xi](ad::Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(xi, idct2_channels_last(g));
  });
}

template <class T>
ad::Var<T> idct2_channels_last(ad::Var<T> x) {
  const int xi = x.id;
  return x.tape->record(idct2_channels_last(x.value()), {x}, [xi](ad::Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(xi, dct2_channels_last(g));
  });
}

template <class T>
ad::Var<T> decay_from_diffusivity(ad::Var<T> k, const Tensor<T>& energy, T t, bool channels_last) {
  if (!(t > T(0))) throw std::invalid_argument("diffusion time t must be positive");
  const Tensor<T>& K = k.value();
  if (K.rank() != 3 || energy.rank() != 2) throw ShapeError("decay: diffusivity must be rank 3, energy rank 2");
  const std::size_t H = energy.dim(0), W = energy.dim(1);
  const bool ok = channels_last ? (K.dim(0) == H && K.dim(1) == W) : (K.dim(1) == H && K.dim(2) == W);
  if (!ok) throw ShapeError("decay: diffusivity " + shape_str(K.shape()) + " vs frequency table " + shape_str(energy.shape()));
  // per-element frequency energy in the layout of k
  Tensor<T> e(K.shape());
  if (channels_last) {
    const std::size_t C = K.dim(2);
    for (std::size_t p = 0; p < H * W; ++p)
      for (std::size_t c = 0; c < C; ++c) e[p * C + c] = energy[p] * t;
  } else {
    const std::size_t C = K.dim(0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < H * W; ++p) e[c * H * W + p] = energy[p] * t;
  }
  Tensor<T> d(K.shape());
  for (std::size_t i = 0; i < K.size(); ++i) d[i] = std::exp(-K[i] * e[i]);
  const int ki = k.id;
  return k.tape->record(d, {k}, [ki, d, e = std::move(e)](ad::Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> gk(d.shape());
    for (std::size_t i = 0; i < d.size(); ++i) gk[i] = -g[i] * d[i] * e[i];
    tp.accumulate(ki, std::move(gk));
  });
}

template <class T>
ad::Var<T> hco_channels_last(ad::Var<T> x, ad::Var<T> decay) {
  return idct2_channels_last(ad::mul_broadcast(dct2_channels_last(x), decay));
}

#define MMHCO_SPECTRAL_INSTANTIATE(T)                                                     \
  template const Tensor<T>& dct_matrix<T>(std::size_t);                                   \
  template FrequencyGrid<T> make_grid<T>(std::size_t, std::size_t);                       \
  template Tensor<T> frequency_energy<T>(const FrequencyGrid<T>&);                        \
  template DecayMatrix<T> build_decay<T>(const FrequencyGrid<T>&, const Tensor<T>&, T);   \
  template Tensor<T> dct2<T>(const Tensor<T>&);                                           \
  template Tensor<T> idct2<T>(const Tensor<T>&);                                          \
  template Tensor<T> dct2_channels_last<T>(const Tensor<T>&);                             \
  template Tensor<T> idct2_channels_last<T>(const Tensor<T>&);                            \
  template Tensor<T> hco_forward<T>(const Tensor<T>&, const DecayMatrix<T>&);             \
  template ad::Var<T> dct2<T>(ad::Var<T>);                                                \
  template ad::Var<T> idct2<T>(ad::Var<T>);                                               \
  template ad::Var<T> dct2_channels_last<T>(ad::Var<T>);                                  \
  template ad::Var<T> idct2_channels_last<T>(ad::Var<T>);                                 \
  template ad::Var<T> decay_from_diffusivity<T>(ad::Var<T>, const Tensor<T>&, T, bool);   \
  template ad::Var<T> hco_channels_last<T>(ad::Var<T>, ad::Var<T>);

MMHCO_SPECTRAL_INSTANTIATE(float)
MMHCO_SPECTRAL_INSTANTIATE(double)

#undef MMHCO_SPECTRAL_INSTANTIATE

}  // namespace mmhco::spectral
