#pragma once

#include "mmhco/autodiff.hpp"
#include "mmhco/tensor.hpp"

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace mmhco::model {

enum class Modality : std::size_t { rgb = 0, event = 1 };
inline constexpr std::array<Modality, 2> kModalities{Modality::rgb, Modality::event};
const char* modality_name(Modality m);

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 32;
  std::vector<std::size_t> stage_depths{1, 1, 2, 1};
  std::size_t resolution = 64;
  /// Adds the block input to its output. Off gives the bare block equations.
  bool residual = true;
  double diffusion_time = 1.0;
  double bn_momentum = 0.1;
  double norm_eps = 1e-5;

  /// Four stages [2,2,18,2], C1 = 128, 224 x 224 input.
  static BackboneConfig full_size();

  std::size_t num_stages() const { return stage_depths.size(); }
  std::size_t total_blocks() const;
  /// C1 * 2^s per stage.
  std::vector<std::size_t> stage_channels() const;
  /// Spatial side length per stage: resolution / 4, then halved (rounding up) per stage.
  std::vector<std::size_t> stage_sizes() const;
  /// Width of the frequency value embeddings; constant across stages.
  std::size_t embed_dim() const { return base_channels; }
  std::size_t feature_dim() const { return stage_channels().back(); }
  void validate() const;
};

template <class T>
struct Linear {
  ad::Parameter<T>* w = nullptr;
  ad::Parameter<T>* b = nullptr;
};

template <class T>
struct Norm {
  ad::Parameter<T>* gamma = nullptr;
  ad::Parameter<T>* beta = nullptr;
};

template <class T>
struct BatchNorm {
  Norm<T> affine;
  ad::Parameter<T>* running_mean = nullptr;  // not trainable
  ad::Parameter<T>* running_var = nullptr;   // not trainable
};

template <class T>
struct StemParams {
  Linear<T> conv1, conv2;  // conv weights [Cout, Cin, 3, 3]
  BatchNorm<T> bn1, bn2;
};

/// Per-modality half of a block.
template <class T>
struct BranchParams {
  Linear<T> in_proj;  // C -> 2C, split into X and Z
  Linear<T> to_k;     // D -> C, embedding to diffusivity
  Norm<T> ln;
  Linear<T> gate;     // C -> C on Z
  Linear<T> out;      // C -> C
};

template <class T>
struct BlockParams {
  ad::Parameter<T>* dw_kernel = nullptr;  // [C,3,3], shared by both modalities
  ad::Parameter<T>* dw_bias = nullptr;
  std::array<BranchParams<T>, 2> branch;
};

template <class T>
struct DownsampleParams {
  Linear<T> conv;  // [2C, C, 3, 3] stride 2
  Norm<T> ln;
};

template <class T>
struct FveParams {
  ad::Parameter<T>* table = nullptr;    // stage-1 embedding [H1, W1, D]
  std::vector<ad::Parameter<T>*> proj;  // proj[s] maps stage s to s+1: depthwise [D,3,3], stride 2
};

template <class T>
using Pair = std::array<ad::Var<T>, 2>;

/// Two-stream backbone: stems, multi-modal heat-conduction blocks, per-modality
/// frequency value embeddings, and downsampling between stages.
template <class T>
class Backbone {
 public:
  /// Registers every parameter in `store` under the "backbone." prefix.
  Backbone(const BackboneConfig& cfg, ad::ParameterStore<T>& store, std::mt19937_64& rng);

  const BackboneConfig& config() const { return cfg_; }

  /// frames[N, Cin, H, W] -> [N, C1, H/4, W/4]. Training mode normalizes with batch
  /// statistics and updates the running ones.
  ad::Var<T> stem(ad::Tape<T>& tape, Modality m, ad::Var<T> frames, bool training);

  /// Embedding tables [H_s, W_s, D] for every stage; stages after the first are
  /// projected from the previous one.
  std::vector<Pair<T>> embeddings(ad::Tape<T>& tape) const;

  /// Diffusivity k[H, W, C] = softplus(embedding * W_k + b_k).
  ad::Var<T> diffusivity(ad::Tape<T>& tape, Modality m, std::size_t stage, std::size_t index, ad::Var<T> fve) const;

  /// Heat conduction on channels-last x[N, H, W, C] with the block's diffusivity.
  ad::Var<T> hco_layer(ad::Tape<T>& tape, Modality m, std::size_t stage, std::size_t index, ad::Var<T> x,
                       ad::Var<T> fve) const;

  /// One block on NCHW inputs; outputs keep the input shape.
  Pair<T> block(ad::Tape<T>& tape, std::size_t stage, std::size_t index, Pair<T> in, const Pair<T>& fve) const;

  /// [N, C, H, W] -> [N, 2C, ceil(H/2), ceil(W/2)].
  Pair<T> downsample(ad::Tape<T>& tape, std::size_t stage, Pair<T> in) const;

  /// rgb, evt: [B, T, Cin, H, W]. Returns the per-clip features F_R, F_E [B, feature_dim]:
  /// spatial mean per frame, then mean over the T frames.
  Pair<T> forward(ad::Tape<T>& tape, const Tensor<T>& rgb, const Tensor<T>& evt, bool training);

  std::size_t parameter_count() const;

  const StemParams<T>& stem_params(Modality m) const { return stems_[static_cast<std::size_t>(m)]; }
  const BlockParams<T>& block_params(std::size_t stage, std::size_t index) const { return blocks_.at(stage).at(index); }
  const FveParams<T>& fve_params(Modality m) const { return fves_[static_cast<std::size_t>(m)]; }
  /// (omega_x^2 + omega_y^2) table for a stage.
  const Tensor<T>& energy(std::size_t stage) const { return energy_.at(stage); }

 private:
  BackboneConfig cfg_;
  ad::ParameterStore<T>* store_;
  std::array<StemParams<T>, 2> stems_;
  std::vector<std::vector<BlockParams<T>>> blocks_;
  std::vector<std::array<DownsampleParams<T>, 2>> downs_;
  std::array<FveParams<T>, 2> fves_;
  std::vector<Tensor<T>> energy_;
};

/// Initializers.
template <class T>
Tensor<T> trunc_normal(Shape shape, double std, std::mt19937_64& rng);
template <class T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// x[..., C] through a linear layer held in `l`.
template <class T>
ad::Var<T> apply(ad::Tape<T>& tape, const Linear<T>& l, ad::Var<T> x);
template <class T>
ad::Var<T> apply(ad::Tape<T>& tape, const Norm<T>& n, ad::Var<T> x, T eps);

}  // namespace mmhco::model
