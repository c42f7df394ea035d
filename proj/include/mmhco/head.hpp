#pragma once

#include "mmhco/autodiff.hpp"
#include "mmhco/model.hpp"

#include <random>
#include <string>
#include <vector>

namespace mmhco::head {

enum class LossMode { ce, literal };
LossMode parse_loss_mode(const std::string& s);
const char* loss_mode_name(LossMode m);

template <class T>
struct Prediction {
  ad::Var<T> logits;  // [B, classes]
  ad::Var<T> probs;   // softmax of logits
};

/// LayerNorm over the fused features, then a linear map to class logits.
template <class T>
class Head {
 public:
  Head(std::size_t in_dim, std::size_t classes, ad::ParameterStore<T>& store, std::mt19937_64& rng);
  Prediction<T> forward(ad::Tape<T>& tape, ad::Var<T> fused, T eps = T(1e-5)) const;
  std::size_t classes() const { return classes_; }
  const model::Linear<T>& classifier() const { return fc_; }

 private:
  std::size_t classes_;
  model::Norm<T> ln_;
  model::Linear<T> fc_;
};

/// ce: mean over the batch of -log p[label].
/// literal: per-class binary cross-entropy averaged over classes, then over the batch.
/// Both clamp probabilities at eps inside the logarithms.
template <class T>
ad::Var<T> loss(const Prediction<T>& pred, const std::vector<std::size_t>& labels, LossMode mode, T eps = T(1e-12));

/// Class indices from one-hot rows; throws unless every row has a single 1 and zeros elsewhere.
template <class T>
std::vector<std::size_t> labels_from_onehot(const Tensor<T>& y);

/// Fraction of rows whose label is among the k largest scores. Ties rank the lower
/// class index first.
template <class T>
double topk_accuracy(const Tensor<T>& scores, const std::vector<std::size_t>& labels, std::size_t k);

/// Rank of `label` in one score row under the same tie rule (0 = top).
template <class T>
std::size_t rank_of(const T* row, std::size_t classes, std::size_t label);

}  // namespace mmhco::head
