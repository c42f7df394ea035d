#pragma once

#include "mmhco/autodiff.hpp"
#include "mmhco/model.hpp"

#include <random>
#include <string>

namespace mmhco::fusion {

enum class Strategy : std::size_t { mcf = 0, mdf = 1, msf = 2 };
inline constexpr std::size_t kNumStrategies = 3;

/// How the fusion strategy is chosen: by the learned policy, fixed, or uniformly at random.
enum class Mode { route, mcf, mdf, msf, random };
Mode parse_mode(const std::string& s);
const char* mode_name(Mode m);

// Plain tensor forms on F_R, F_E [B, C].
template <class T>
Tensor<T> mcf(const Tensor<T>& fr, const Tensor<T>& fe);
template <class T>
Tensor<T> mdf(const Tensor<T>& fr, const Tensor<T>& fe);

template <class T>
ad::Var<T> mcf(ad::Var<T> fr, ad::Var<T> fe);
/// concat(F_R - F_R*F_E, F_E - F_R*F_E)
template <class T>
ad::Var<T> mdf(ad::Var<T> fr, ad::Var<T> fe);

template <class T>
struct Bundle {
  ad::Var<T> fused;         // [B, 2C]
  ad::Var<T> route;         // [B, 3] one-hot rows
  ad::Var<T> route_logits;  // [B, 3]
  std::vector<std::size_t> choice;
};

template <class T>
class Fusion {
 public:
  /// `per_channel_weights` gives the weighted strategy one weight per channel instead
  /// of one scalar per modality.
  Fusion(std::size_t feature_dim, ad::ParameterStore<T>& store, std::mt19937_64& rng, bool per_channel_weights = false);

  std::size_t feature_dim() const { return dim_; }
  bool per_channel_weights() const { return per_channel_; }

  /// Modality weights sigmoid(W concat(F_R, F_E) + b): [B, 2] or [B, 2C].
  ad::Var<T> msf_weights(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe) const;
  ad::Var<T> msf(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe) const;
  ad::Var<T> strategy(ad::Tape<T>& tape, Strategy s, ad::Var<T> fr, ad::Var<T> fe) const;

  /// Policy MLP: linear 2C -> 2C, GeLU, linear 2C -> 3.
  ad::Var<T> policy_logits(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe) const;

  /// Selects a strategy per sample and returns the fused features. In training with
  /// Mode::route the choice is a straight-through Gumbel-Softmax sample at temperature
  /// `tau`; at inference it is the argmax of the policy logits. Mode::random draws
  /// uniformly in both phases.
  Bundle<T> route(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe, Mode mode, T tau, bool training,
                  std::mt19937_64& rng) const;

  const model::Linear<T>& msf_params() const { return msf_; }
  const model::Linear<T>& policy_hidden() const { return fc1_; }
  const model::Linear<T>& policy_out() const { return fc2_; }

 private:
  std::size_t dim_;
  bool per_channel_;
  model::Linear<T> msf_, fc1_, fc2_;
};

/// Standard Gumbel(0, 1) noise of the given shape.
template <class T>
Tensor<T> gumbel_noise(const Shape& shape, std::mt19937_64& rng);

}  // namespace mmhco::fusion
