#include "mmhco/head.hpp"

#include <stdexcept>

namespace mmhco::head {

LossMode parse_loss_mode(const std::string& s) {
  if (s == "ce") return LossMode::ce;
  if (s == "literal") return LossMode::literal;
  throw std::invalid_argument("unknown loss mode '" + s + "' (expected ce or literal)");
}

const char* loss_mode_name(LossMode m) { return m == LossMode::ce ? "ce" : "literal"; }

template <class T>
Head<T>::Head(std::size_t in_dim, std::size_t classes, ad::ParameterStore<T>& store, std::mt19937_64& rng)
    : classes_(classes) {
  if (classes < 2) throw std::invalid_argument("head: need at least 2 classes, got " + std::to_string(classes));
  ln_.gamma = &store.add("head.ln.gamma", Tensor<T>(Shape{in_dim}, T(1)));
  ln_.beta = &store.add("head.ln.beta", Tensor<T>(Shape{in_dim}));
  fc_.w = &store.add("head.fc.w", model::trunc_normal<T>({in_dim, classes}, 0.02, rng));
  fc_.b = &store.add("head.fc.b", Tensor<T>(Shape{classes}));
}

template <class T>
Prediction<T> Head<T>::forward(ad::Tape<T>& tape, ad::Var<T> fused, T eps) const {
  Prediction<T> p;
  p.logits = model::apply(tape, fc_, model::apply(tape, ln_, fused, eps));
  p.probs = ad::softmax(p.logits);
  return p;
}

template <class T>
ad::Var<T> loss(const Prediction<T>& pred, const std::vector<std::size_t>& labels, LossMode mode, T eps) {
  if (mode == LossMode::ce) return ad::softmax_cross_entropy(pred.logits, labels, eps);
  return ad::binary_cross_entropy_probs(pred.probs, labels, eps);
}

template <class T>
std::vector<std::size_t> labels_from_onehot(const Tensor<T>& y) {
  if (y.rank() != 2) throw ShapeError("labels must be [B, classes], got " + shape_str(y.shape()));
  const std::size_t B = y.dim(0), C = y.dim(1);
  std::vector<std::size_t> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t ones = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const T v = y[b * C + c];
      if (v == T(1)) {
        ++ones;
        out[b] = c;
      } else if (v != T(0)) {
        ones = 2;
      }
    }
    if (ones != 1) throw std::invalid_argument("label row " + std::to_string(b) + " is not one-hot");
  }
  return out;
}

template <class T>
std::size_t rank_of(const T* row, std::size_t classes, std::size_t label) {
  std::size_t r = 0;
  for (std::size_t c = 0; c < classes; ++c)
    if (row[c] > row[label] || (row[c] == row[label] && c < label)) ++r;
  return r;
}

template <class T>
double topk_accuracy(const Tensor<T>& scores, const std::vector<std::size_t>& labels, std::size_t k) {
  if (scores.rank() != 2 || scores.dim(0) != labels.size())
    throw ShapeError("topk: scores " + shape_str(scores.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t C = scores.dim(1);
  if (k == 0 || k > C) throw std::invalid_argument("topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(C) + "]");
  std::size_t hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= C) throw std::out_of_range("topk: label " + std::to_string(labels[b]) + " out of range");
    if (rank_of(scores.ptr() + b * C, C, labels[b]) < k) ++hits;
  }
  return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

#define MMHCO_HEAD_INSTANTIATE(T)                                                                          \
  template class Head<T>;                                                                                  \
  template ad::Var<T> loss<T>(const Prediction<T>&, const std::vector<std::size_t>&, LossMode, T);         \
  template std::vector<std::size_t> labels_from_onehot<T>(const Tensor<T>&);                               \
  template double topk_accuracy<T>(const Tensor<T>&, const std::vector<std::size_t>&, std::size_t);        \
  template std::size_t rank_of<T>(const T*, std::size_t, std::size_t);

MMHCO_HEAD_INSTANTIATE(float)
MMHCO_HEAD_INSTANTIATE(double)

#undef MMHCO_HEAD_INSTANTIATE

}  // namespace mmhco::head
