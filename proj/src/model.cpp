#include "mmhco/model.hpp"

#include "mmhco/spectral.hpp"

#include <cmath>
#include <stdexcept>

namespace mmhco::model {

const char* modality_name(Modality m) { return m == Modality::rgb ? "rgb" : "event"; }

BackboneConfig BackboneConfig::full_size() {
  BackboneConfig c;
  c.base_channels = 128;
  c.stage_depths = {2, 2, 18, 2};
  c.resolution = 224;
  return c;
}

std::size_t BackboneConfig::total_blocks() const {
  std::size_t n = 0;
  for (auto d : stage_depths) n += d;
  return n;
}

std::vector<std::size_t> BackboneConfig::stage_channels() const {
  std::vector<std::size_t> c;
  for (std::size_t s = 0; s < num_stages(); ++s) c.push_back(base_channels << s);
  return c;
}

std::vector<std::size_t> BackboneConfig::stage_sizes() const {
  std::vector<std::size_t> sz;
  std::size_t h = resolution / 4;
  for (std::size_t s = 0; s < num_stages(); ++s) {
    sz.push_back(h);
    h = conv_out_size(h, 3, 2, 1);
  }
  return sz;
}

void BackboneConfig::validate() const {
  if (in_channels == 0 || base_channels < 2) throw std::invalid_argument("backbone: need in_channels >= 1 and C1 >= 2");
  if (stage_depths.empty()) throw std::invalid_argument("backbone: at least one stage required");
  for (auto d : stage_depths)
    if (d == 0) throw std::invalid_argument("backbone: stage depth must be positive");
  if (resolution < 4 || resolution % 4 != 0)
    throw ShapeError("backbone: resolution " + std::to_string(resolution) + " is not a positive multiple of 4");
  if (!(diffusion_time > 0)) throw std::invalid_argument("backbone: diffusion time must be positive");
  if (!(norm_eps > 0)) throw std::invalid_argument("backbone: norm eps must be positive");
}

template <class T>
Tensor<T> trunc_normal(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double z;
    do z = N(rng);
    while (std::abs(z) > 2.0);
    v = static_cast<T>(z * std);
  }
  return t;
}

template <class T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return trunc_normal<T>(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

template <class T>
ad::Var<T> apply(ad::Tape<T>& tape, const Linear<T>& l, ad::Var<T> x) {
  return ad::linear(x, tape.param(*l.w), tape.param(*l.b));
}

template <class T>
ad::Var<T> apply(ad::Tape<T>& tape, const Norm<T>& n, ad::Var<T> x, T eps) {
  return ad::layernorm(x, tape.param(*n.gamma), tape.param(*n.beta), eps);
}

namespace {

template <class T>
struct Registrar {
  ad::ParameterStore<T>& store;
  std::mt19937_64& rng;

  ad::Parameter<T>* add(const std::string& name, Tensor<T> v, bool trainable = true) {
    return &store.add("backbone." + name, std::move(v), trainable);
  }
  Linear<T> linear(const std::string& name, std::size_t in, std::size_t out) {
    return {add(name + ".w", trunc_normal<T>({in, out}, 0.02, rng)), add(name + ".b", Tensor<T>(Shape{out}))};
  }
  Linear<T> conv(const std::string& name, std::size_t in, std::size_t out) {
    return {add(name + ".w", kaiming_normal<T>({out, in, 3, 3}, in * 9, rng)), add(name + ".b", Tensor<T>(Shape{out}))};
  }
  Norm<T> norm(const std::string& name, std::size_t c) {
    return {add(name + ".gamma", Tensor<T>(Shape{c}, T(1))), add(name + ".beta", Tensor<T>(Shape{c}))};
  }
  BatchNorm<T> batchnorm(const std::string& name, std::size_t c) {
    return {norm(name, c), add(name + ".running_mean", Tensor<T>(Shape{c}), false),
            add(name + ".running_var", Tensor<T>(Shape{c}, T(1)), false)};
  }
};

template <class T>
ad::Var<T> to_nhwc(ad::Var<T> x) {
  return ad::permute(x, {0, 2, 3, 1});
}
template <class T>
ad::Var<T> to_nchw(ad::Var<T> x) {
  return ad::permute(x, {0, 3, 1, 2});
}

}  // namespace

template <class T>
Backbone<T>::Backbone(const BackboneConfig& cfg, ad::ParameterStore<T>& store, std::mt19937_64& rng)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  Registrar<T> reg{store, rng};
  const auto ch = cfg_.stage_channels();
  const auto sz = cfg_.stage_sizes();
  const std::size_t C1 = cfg_.base_channels, D = cfg_.embed_dim();

  for (Modality m : kModalities) {
    const std::string p = std::string("stem.") + modality_name(m);
    auto& st = stems_[static_cast<std::size_t>(m)];
    st.conv1 = reg.conv(p + ".conv1", cfg_.in_channels, C1 / 2);
    st.bn1 = reg.batchnorm(p + ".bn1", C1 / 2);
    st.conv2 = reg.conv(p + ".conv2", C1 / 2, C1);
    st.bn2 = reg.batchnorm(p + ".bn2", C1);
  }

  for (Modality m : kModalities) {
    const std::string p = std::string("fve.") + modality_name(m);
    auto& f = fves_[static_cast<std::size_t>(m)];
    f.table = reg.add(p + ".table", trunc_normal<T>({sz[0], sz[0], D}, 0.02, rng));
    for (std::size_t s = 0; s + 1 < cfg_.num_stages(); ++s) {
      Tensor<T> delta(Shape{D, 3, 3});
      for (std::size_t d = 0; d < D; ++d) delta.at({d, 1, 1}) = T(1);
      f.proj.push_back(reg.add(p + ".proj" + std::to_string(s), std::move(delta)));
    }
  }

  for (std::size_t s = 0; s < cfg_.num_stages(); ++s) {
    const std::size_t C = ch[s];
    if (s > 0) {
      std::array<DownsampleParams<T>, 2> ds;
      for (Modality m : kModalities) {
        const std::string p = "down" + std::to_string(s - 1) + "." + modality_name(m);
        ds[static_cast<std::size_t>(m)] = {reg.conv(p + ".conv", ch[s - 1], C), reg.norm(p + ".ln", C)};
      }
      downs_.push_back(ds);
    }
    blocks_.emplace_back();
    for (std::size_t j = 0; j < cfg_.stage_depths[s]; ++j) {
      const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(j);
      BlockParams<T> b;
      b.dw_kernel = reg.add(p + ".dw.w", kaiming_normal<T>({C, 3, 3}, 9, rng));
      b.dw_bias = reg.add(p + ".dw.b", Tensor<T>(Shape{C}));
      for (Modality m : kModalities) {
        const std::string q = p + "." + modality_name(m);
        auto& br = b.branch[static_cast<std::size_t>(m)];
        br.in_proj = reg.linear(q + ".in_proj", C, 2 * C);
        br.to_k = reg.linear(q + ".to_k", D, C);
        br.ln = reg.norm(q + ".ln", C);
        br.gate = reg.linear(q + ".gate", C, C);
        br.out = reg.linear(q + ".out", C, C);
      }
      blocks_.back().push_back(b);
    }
    energy_.push_back(spectral::frequency_energy(spectral::make_grid<T>(sz[s], sz[s])));
  }
}

template <class T>
ad::Var<T> Backbone<T>::stem(ad::Tape<T>& tape, Modality m, ad::Var<T> frames, bool training) {
  const Shape& s = frames.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels)
    throw ShapeError("stem expects [N," + std::to_string(cfg_.in_channels) + ",H,W], got " + shape_str(s));
  if (s[2] % 4 != 0 || s[3] % 4 != 0) throw ShapeError("stem: spatial dims of " + shape_str(s) + " not divisible by 4");
  const auto& st = stems_[static_cast<std::size_t>(m)];
  const T eps = static_cast<T>(cfg_.norm_eps);
  const T mom = static_cast<T>(cfg_.bn_momentum);
  auto norm = [&](ad::Var<T> x, const BatchNorm<T>& bn) {
    auto g = tape.param(*bn.affine.gamma);
    auto b = tape.param(*bn.affine.beta);
    if (!training) return ad::batchnorm2d_fixed(x, bn.running_mean->value, bn.running_var->value, g, b, eps);
    Tensor<T> mean, var;
    auto y = ad::batchnorm2d(x, g, b, eps, &mean, &var);
    for (std::size_t c = 0; c < mean.size(); ++c) {
      T& rm = bn.running_mean->value[c];
      T& rv = bn.running_var->value[c];
      rm = (T(1) - mom) * rm + mom * mean[c];
      rv = (T(1) - mom) * rv + mom * var[c];
    }
    return y;
  };
  auto x = ad::conv2d(frames, tape.param(*st.conv1.w), tape.param(*st.conv1.b), {2, 1});
  x = ad::gelu(norm(x, st.bn1));
  x = ad::conv2d(x, tape.param(*st.conv2.w), tape.param(*st.conv2.b), {2, 1});
  return ad::gelu(norm(x, st.bn2));
}

template <class T>
std::vector<Pair<T>> Backbone<T>::embeddings(ad::Tape<T>& tape) const {
  std::vector<Pair<T>> out(cfg_.num_stages());
  const std::size_t D = cfg_.embed_dim();
  for (Modality m : kModalities) {
    const auto& f = fves_[static_cast<std::size_t>(m)];
    auto table = tape.param(*f.table);
    out[0][static_cast<std::size_t>(m)] = table;
    // depthwise projection works on [1, D, H, W]
    auto cur = ad::reshape(ad::permute(table, {2, 0, 1}), {1, D, table.shape()[0], table.shape()[1]});
    for (std::size_t s = 1; s < cfg_.num_stages(); ++s) {
      cur = ad::depthwise_conv2d(cur, tape.param(*f.proj[s - 1]), {2, 1});
      const Shape cs = cur.shape();
      out[s][static_cast<std::size_t>(m)] = ad::permute(ad::reshape(cur, {D, cs[2], cs[3]}), {1, 2, 0});
    }
  }
  return out;
}

template <class T>
ad::Var<T> Backbone<T>::diffusivity(ad::Tape<T>& tape, Modality m, std::size_t stage, std::size_t index,
                                    ad::Var<T> fve) const {
  const auto& br = blocks_.at(stage).at(index).branch[static_cast<std::size_t>(m)];
  return ad::softplus(apply(tape, br.to_k, fve));
}

template <class T>
ad::Var<T> Backbone<T>::hco_layer(ad::Tape<T>& tape, Modality m, std::size_t stage, std::size_t index, ad::Var<T> x,
                                  ad::Var<T> fve) const {
  const Shape& xs = x.shape();
  const Shape& fs = fve.shape();
  if (xs.size() != 4 || fs.size() != 3 || xs[1] != fs[0] || xs[2] != fs[1])
    throw ShapeError("hco layer: features " + shape_str(xs) + " do not match embedding " + shape_str(fs));
  auto k = diffusivity(tape, m, stage, index, fve);
  auto decay = spectral::decay_from_diffusivity(k, energy_.at(stage), static_cast<T>(cfg_.diffusion_time), true);
  return spectral::hco_channels_last(x, decay);
}

template <class T>
Pair<T> Backbone<T>::block(ad::Tape<T>& tape, std::size_t stage, std::size_t index, Pair<T> in,
                           const Pair<T>& fve) const {
  if (in[0].shape() != in[1].shape())
    throw ShapeError("block: modality shapes differ, " + shape_str(in[0].shape()) + " vs " + shape_str(in[1].shape()));
  const auto& bp = blocks_.at(stage).at(index);
  const std::size_t C = in[0].shape()[1];
  const T eps = static_cast<T>(cfg_.norm_eps);
  auto dw = tape.param(*bp.dw_kernel);
  auto dwb = tape.param(*bp.dw_bias);
  Pair<T> out;
  for (Modality m : kModalities) {
    const std::size_t i = static_cast<std::size_t>(m);
    const auto& br = bp.branch[i];
    auto y = to_nhwc(ad::add_channel_bias(ad::depthwise_conv2d(in[i], dw, {1, 1}), dwb));
    y = apply(tape, br.in_proj, y);
    auto X = ad::slice(y, 3, 0, C);
    auto Z = ad::slice(y, 3, C, C);
    X = apply(tape, br.ln, hco_layer(tape, m, stage, index, X, fve[i]), eps);
    auto o = to_nchw(apply(tape, br.out, ad::mul(X, ad::silu(apply(tape, br.gate, Z)))));
    out[i] = cfg_.residual ? ad::add(in[i], o) : o;
  }
  return out;
}

template <class T>
Pair<T> Backbone<T>::downsample(ad::Tape<T>& tape, std::size_t stage, Pair<T> in) const {
  const T eps = static_cast<T>(cfg_.norm_eps);
  Pair<T> out;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& d = downs_.at(stage)[i];
    auto y = ad::conv2d(in[i], tape.param(*d.conv.w), tape.param(*d.conv.b), {2, 1});
    out[i] = to_nchw(apply(tape, d.ln, to_nhwc(y), eps));
  }
  return out;
}

template <class T>
Pair<T> Backbone<T>::forward(ad::Tape<T>& tape, const Tensor<T>& rgb, const Tensor<T>& evt, bool training) {
  if (rgb.shape() != evt.shape())
    throw ShapeError("backbone: rgb " + shape_str(rgb.shape()) + " and event " + shape_str(evt.shape()) + " differ");
  const Shape& s = rgb.shape();
  if (s.size() != 5) throw ShapeError("backbone expects [B,T,C,H,W], got " + shape_str(s));
  if (s[3] != cfg_.resolution || s[4] != cfg_.resolution)
    throw ShapeError("backbone: input " + shape_str(s) + " does not match resolution " +
                     std::to_string(cfg_.resolution));
  const std::size_t B = s[0], T_ = s[1], N = B * T_;
  Pair<T> x;
  x[0] = stem(tape, Modality::rgb, tape.constant(rgb.reshape({N, s[2], s[3], s[4]})), training);
  x[1] = stem(tape, Modality::event, tape.constant(evt.reshape({N, s[2], s[3], s[4]})), training);
  const auto emb = embeddings(tape);
  for (std::size_t st = 0; st < cfg_.num_stages(); ++st) {
    if (st > 0) x = downsample(tape, st - 1, x);
    for (std::size_t j = 0; j < cfg_.stage_depths[st]; ++j) x = block(tape, st, j, x, emb[st]);
  }
  Pair<T> f;
  for (std::size_t i = 0; i < 2; ++i) {
    auto pooled = ad::reduce(ReduceOp::mean, ad::reduce(ReduceOp::mean, x[i], 3), 2);
    const std::size_t C = pooled.shape()[1];
    f[i] = ad::reduce(ReduceOp::mean, ad::reshape(pooled, {B, T_, C}), 1);
  }
  return f;
}

template <class T>
std::size_t Backbone<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : store_->all())
    if (p->trainable && p->name.rfind("backbone.", 0) == 0) n += p->value.size();
  return n;
}

#define MMHCO_MODEL_INSTANTIATE(T)                                                              \
  template class Backbone<T>;                                                                   \
  template Tensor<T> trunc_normal<T>(Shape, double, std::mt19937_64&);                          \
  template Tensor<T> kaiming_normal<T>(Shape, std::size_t, std::mt19937_64&);                   \
  template ad::Var<T> apply<T>(ad::Tape<T>&, const Linear<T>&, ad::Var<T>);                     \
  template ad::Var<T> apply<T>(ad::Tape<T>&, const Norm<T>&, ad::Var<T>, T);

MMHCO_MODEL_INSTANTIATE(float)
MMHCO_MODEL_INSTANTIATE(double)

#undef MMHCO_MODEL_INSTANTIATE

}  // namespace mmhco::model
