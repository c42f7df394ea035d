#pragma once

#include "mmhco/autodiff.hpp"
#include "mmhco/tensor.hpp"

#include <cstddef>

namespace mmhco::spectral {

/// Orthonormal DCT-II matrix of size n x n; row u holds basis function u.
/// Cached per (type, n); the returned reference stays valid for the program lifetime.
template <class T>
const Tensor<T>& dct_matrix(std::size_t n);

/// Discrete frequencies of the cosine basis: omega_x[h] = pi*h/H, omega_y[w] = pi*w/W.
template <class T>
struct FrequencyGrid {
  std::size_t H = 0, W = 0;
  Tensor<T> omega_x;
  Tensor<T> omega_y;
};

template <class T>
FrequencyGrid<T> make_grid(std::size_t H, std::size_t W);

/// (omega_x^2 + omega_y^2) laid out as [H, W].
template <class T>
Tensor<T> frequency_energy(const FrequencyGrid<T>& grid);

/// exp(-k (omega_x^2 + omega_y^2) t) for a per-channel, per-frequency diffusivity k[C,H,W].
template <class T>
struct DecayMatrix {
  Tensor<T> values;
  Tensor<T> k;
  T t = T(1);
};

/// Rejects negative diffusivity and non-positive time.
template <class T>
DecayMatrix<T> build_decay(const FrequencyGrid<T>& grid, const Tensor<T>& k, T t);

/// Orthonormal 2-D DCT-II over the last two axes of x[..., H, W].
template <class T>
Tensor<T> dct2(const Tensor<T>& x);
/// Inverse of dct2 (orthonormal DCT-III).
template <class T>
Tensor<T> idct2(const Tensor<T>& x);

/// Same transforms on channels-last data x[N, H, W, C].
template <class T>
Tensor<T> dct2_channels_last(const Tensor<T>& x);
template <class T>
Tensor<T> idct2_channels_last(const Tensor<T>& x);

/// U_t = idct2(dct2(U_0) * decay), decay broadcast over the batch axis of U_0[B,C,H,W].
template <class T>
Tensor<T> hco_forward(const Tensor<T>& u0, const DecayMatrix<T>& decay);

// ---------------------------------------------------------------------------
// Differentiable forms. The transforms are orthonormal, so the backward pass of
// each one is the other applied to the incoming gradient.

template <class T>
ad::Var<T> dct2(ad::Var<T> x);
template <class T>
ad::Var<T> idct2(ad::Var<T> x);
template <class T>
ad::Var<T> dct2_channels_last(ad::Var<T> x);
template <class T>
ad::Var<T> idct2_channels_last(ad::Var<T> x);

/// exp(-k * energy * t). `k` is [C,H,W] (channels_last=false) or [H,W,C];
/// `energy` is the [H,W] table from frequency_energy.
template <class T>
ad::Var<T> decay_from_diffusivity(ad::Var<T> k, const Tensor<T>& energy, T t, bool channels_last);

/// Heat-conduction operator on channels-last features x[N,H,W,C] with decay[H,W,C].
template <class T>
ad::Var<T> hco_channels_last(ad::Var<T> x, ad::Var<T> decay);

}  // namespace mmhco::spectral
