#include "mmhco/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace mmhco::fusion {

Mode parse_mode(const std::string& s) {
  if (s == "route") return Mode::route;
  if (s == "mcf") return Mode::mcf;
  if (s == "mdf") return Mode::mdf;
  if (s == "msf") return Mode::msf;
  if (s == "random") return Mode::random;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected route, mcf, mdf, msf or random)");
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::route: return "route";
    case Mode::mcf: return "mcf";
    case Mode::mdf: return "mdf";
    case Mode::msf: return "msf";
    case Mode::random: return "random";
  }
  return "?";
}

namespace {

void check_pair(const Shape& a, const Shape& b, const char* what) {
  if (a != b || a.size() != 2)
    throw ShapeError(std::string(what) + ": features must share a [B,C] shape, got " + shape_str(a) + " and " +
                     shape_str(b));
}

}  // namespace

template <class T>
Tensor<T> mcf(const Tensor<T>& fr, const Tensor<T>& fe) {
  check_pair(fr.shape(), fe.shape(), "mcf");
  return concat(fr, fe, 1);
}

template <class T>
Tensor<T> mdf(const Tensor<T>& fr, const Tensor<T>& fe) {
  check_pair(fr.shape(), fe.shape(), "mdf");
  const Tensor<T> common = mul(fr, fe);
  return concat(sub(fr, common), sub(fe, common), 1);
}

template <class T>
ad::Var<T> mcf(ad::Var<T> fr, ad::Var<T> fe) {
  check_pair(fr.shape(), fe.shape(), "mcf");
  return ad::concat(fr, fe, 1);
}

template <class T>
ad::Var<T> mdf(ad::Var<T> fr, ad::Var<T> fe) {
  check_pair(fr.shape(), fe.shape(), "mdf");
  auto common = ad::mul(fr, fe);
  return ad::concat(ad::sub(fr, common), ad::sub(fe, common), 1);
}

template <class T>
Tensor<T> gumbel_noise(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Tensor<T> g(shape);
  for (auto& v : g.data()) {
    double u = U(rng);
    if (u <= 0.0) u = 1e-300;
    v = static_cast<T>(-std::log(-std::log(u)));
  }
  return g;
}

template <class T>
Fusion<T>::Fusion(std::size_t feature_dim, ad::ParameterStore<T>& store, std::mt19937_64& rng,
                  bool per_channel_weights)
    : dim_(feature_dim), per_channel_(per_channel_weights) {
  const std::size_t F = 2 * dim_;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    model::Linear<T> l;
    l.w = &store.add("fusion." + name + ".w", model::trunc_normal<T>({in, out}, 0.02, rng));
    l.b = &store.add("fusion." + name + ".b", Tensor<T>(Shape{out}));
    return l;
  };
  msf_ = lin("msf", F, per_channel_ ? F : 2);
  fc1_ = lin("policy.fc1", F, F);
  fc2_ = lin("policy.fc2", F, kNumStrategies);
}

template <class T>
ad::Var<T> Fusion<T>::msf_weights(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe) const {
  return ad::sigmoid(model::apply(tape, msf_, mcf(fr, fe)));
}

template <class T>
ad::Var<T> Fusion<T>::msf(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe) const {
  check_pair(fr.shape(), fe.shape(), "msf");
  auto w = msf_weights(tape, fr, fe);
  if (per_channel_) return ad::mul(mcf(fr, fe), w);
  return ad::concat(ad::scale_rows(fr, ad::slice(w, 1, 0, 1)), ad::scale_rows(fe, ad::slice(w, 1, 1, 1)), 1);
}

template <class T>
ad::Var<T> Fusion<T>::strategy(ad::Tape<T>& tape, Strategy s, ad::Var<T> fr, ad::Var<T> fe) const {
  switch (s) {
    case Strategy::mcf: return mcf(fr, fe);
    case Strategy::mdf: return mdf(fr, fe);
    case Strategy::msf: return msf(tape, fr, fe);
  }
  throw std::logic_error("unreachable");
}

template <class T>
ad::Var<T> Fusion<T>::policy_logits(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe) const {
  return model::apply(tape, fc2_, ad::gelu(model::apply(tape, fc1_, mcf(fr, fe))));
}

template <class T>
Bundle<T> Fusion<T>::route(ad::Tape<T>& tape, ad::Var<T> fr, ad::Var<T> fe, Mode mode, T tau, bool training,
                           std::mt19937_64& rng) const {
  if (!(tau > T(0))) throw std::invalid_argument("fusion: temperature must be positive");
  check_pair(fr.shape(), fe.shape(), "route");
  if (fr.shape()[1] != dim_)
    throw ShapeError("fusion: feature width " + std::to_string(fr.shape()[1]) + ", expected " + std::to_string(dim_));
  const std::size_t B = fr.shape()[0];
  Bundle<T> out;
  out.route_logits = policy_logits(tape, fr, fe);

  Tensor<T> onehot(Shape{B, kNumStrategies});
  out.choice.resize(B);
  auto fix = [&](std::size_t b, std::size_t s) {
    out.choice[b] = s;
    onehot.at({b, s}) = T(1);
  };
  const bool stochastic_route = mode == Mode::route && training;
  if (stochastic_route) {
    out.route = ad::gumbel_softmax(out.route_logits, gumbel_noise<T>(onehot.shape(), rng), tau, true);
    out.choice = argmax_rows(out.route.value());
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, kNumStrategies - 1);
    const auto best = argmax_rows(out.route_logits.value());
    for (std::size_t b = 0; b < B; ++b) {
      switch (mode) {
        case Mode::route: fix(b, best[b]); break;
        case Mode::mcf: fix(b, 0); break;
        case Mode::mdf: fix(b, 1); break;
        case Mode::msf: fix(b, 2); break;
        case Mode::random: fix(b, pick(rng)); break;
      }
    }
    out.route = tape.constant(onehot);
  }

  std::array<bool, kNumStrategies> used{};
  for (auto c : out.choice) used[c] = true;
  // training with the learned policy mixes all three so the soft Jacobian sees every path
  if (stochastic_route) used.fill(true);
  ad::Var<T> fused;
  bool first = true;
  for (std::size_t s = 0; s < kNumStrategies; ++s) {
    if (!used[s]) continue;
    auto term = ad::scale_rows(strategy(tape, static_cast<Strategy>(s), fr, fe), ad::slice(out.route, 1, s, 1));
    fused = first ? term : ad::add(fused, term);
    first = false;
  }
  out.fused = fused;
  return out;
}

#define MMHCO_FUSION_INSTANTIATE(T)                                        \
  template Tensor<T> mcf<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> mdf<T>(const Tensor<T>&, const Tensor<T>&);           \
  template ad::Var<T> mcf<T>(ad::Var<T>, ad::Var<T>);                      \
  template ad::Var<T> mdf<T>(ad::Var<T>, ad::Var<T>);                      \
  template Tensor<T> gumbel_noise<T>(const Shape&, std::mt19937_64&);      \
  template class Fusion<T>;

MMHCO_FUSION_INSTANTIATE(float)
MMHCO_FUSION_INSTANTIATE(double)

#undef MMHCO_FUSION_INSTANTIATE

}  // namespace mmhco::fusion
