#include "mmhco/model.hpp"
#include "mmhco/profiler.hpp"
#include "mmhco/spectral.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace mmhco;
using namespace mmhco::model;
using ad::Tape;
using ad::Var;

namespace {

BackboneConfig mini() {
  BackboneConfig c;
  c.base_channels = 8;
  c.stage_depths = {1, 1, 1, 1};
  c.resolution = 16;
  return c;
}

struct Fixture {
  BackboneConfig cfg;
  ad::ParameterStore<double> store;
  std::mt19937_64 rng{7};
  Backbone<double> net;
  explicit Fixture(BackboneConfig c = mini()) : cfg(c), net(cfg, store, rng) {}
};

void fill(ad::Parameter<double>* p, double v) { std::fill(p->value.data().begin(), p->value.data().end(), v); }

void copy_linear(const Linear<double>& from, const Linear<double>& to) {
  to.w->value = from.w->value;
  to.b->value = from.b->value;
}

}  // namespace

TEST_CASE("stage geometry") {
  auto full = BackboneConfig::full_size();
  CHECK(full.stage_sizes().front() == 56);
  CHECK(full.stage_channels() == std::vector<std::size_t>{128, 256, 512, 1024});
  std::size_t blocks = 0;
  for (auto d : full.stage_depths) blocks += d;
  CHECK(blocks == 24);
  CHECK(full.total_blocks() == 24);

  BackboneConfig c;
  c.resolution = 32;
  CHECK(c.stage_sizes() == std::vector<std::size_t>{8, 4, 2, 1});
  CHECK(c.feature_dim() == c.stage_channels()[3]);
  c.resolution = 30;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("stem output shape and determinism") {
  Fixture f;
  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor<double>({2, 3, 16, 16}, rng);
  Tape<double> t;
  auto y = f.net.stem(t, Modality::rgb, t.constant(x), false);
  CHECK(y.shape() == Shape{2, 8, 4, 4});

  Tensor<double> zero(Shape{1, 3, 16, 16});
  Tape<double> t1, t2;
  auto a = f.net.stem(t1, Modality::event, t1.constant(zero), false);
  auto b = f.net.stem(t2, Modality::event, t2.constant(zero), false);
  CHECK(a.value().vec() == b.value().vec());
}

TEST_CASE("heat layer matches the spectral module") {
  Fixture f;
  std::mt19937_64 rng(2);
  const std::size_t H = 4, C = 8;
  auto x = oracle::random_tensor<double>({2, H, H, C}, rng);
  Tape<double> t;
  auto emb = f.net.embeddings(t);
  auto fve = emb[0][0];
  auto y = f.net.hco_layer(t, Modality::rgb, 0, 0, t.constant(x), fve);

  // k[H,W,C] -> [C,H,W], then the plain-tensor operator on NCHW data
  const auto& k = f.net.diffusivity(t, Modality::rgb, 0, 0, fve).value();
  Tensor<double> kc(Shape{C, H, H}), xc(Shape{2, C, H, H});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < H; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        kc.at({c, h, w}) = k.at({h, w, c});
        for (std::size_t n = 0; n < 2; ++n) xc.at({n, c, h, w}) = x.at({n, h, w, c});
      }
  auto ref = spectral::hco_forward(xc, spectral::build_decay(spectral::make_grid<double>(H, H), kc, 1.0));
  double worst = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < H; ++w)
        for (std::size_t c = 0; c < C; ++c)
          worst = std::max(worst, std::abs(y.value().at({n, h, w, c}) - ref.at({n, c, h, w})));
  CHECK(worst < 1e-12);
}

TEST_CASE("zeroed embedding projection gives uniform diffusivity log 2") {
  Fixture f;
  const auto& br = f.net.block_params(0, 0).branch[1];
  fill(br.to_k.w, 0);
  fill(br.to_k.b, 0);
  std::mt19937_64 rng(3);
  auto x = oracle::random_tensor<double>({1, 4, 4, 8}, rng);
  Tape<double> t;
  auto fve = f.net.embeddings(t)[0][1];
  for (double v : f.net.diffusivity(t, Modality::event, 0, 0, fve).value().data()) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  auto y = f.net.hco_layer(t, Modality::event, 0, 0, t.constant(x), fve);
  CHECK(l2_norm(y.value()) <= l2_norm(x));
  // DC component untouched, everything else strictly damped
  CHECK(l2_norm(y.value()) < l2_norm(x));
}

TEST_CASE("identical inputs and tied weights give identical streams") {
  Fixture f;
  auto& bp = f.net.block_params(0, 0);
  const auto& r = bp.branch[0];
  const auto& e = bp.branch[1];
  copy_linear(r.in_proj, e.in_proj);
  copy_linear(r.to_k, e.to_k);
  copy_linear(r.gate, e.gate);
  copy_linear(r.out, e.out);
  e.ln.gamma->value = r.ln.gamma->value;
  e.ln.beta->value = r.ln.beta->value;
  f.net.fve_params(Modality::event).table->value = f.net.fve_params(Modality::rgb).table->value;

  std::mt19937_64 rng(4);
  auto x = oracle::random_tensor<double>({2, 8, 4, 4}, rng);
  Tape<double> t;
  auto emb = f.net.embeddings(t);
  auto out = f.net.block(t, 0, 0, {t.constant(x), t.constant(x)}, emb[0]);
  CHECK(out[0].value().vec() == out[1].value().vec());
}

TEST_CASE("residual identity and toggle") {
  std::mt19937_64 rng(5);
  auto x = oracle::random_tensor<double>({3, 8, 4, 4}, rng);
  auto y = oracle::random_tensor<double>({3, 8, 4, 4}, rng);

  SUBCASE("zeroed block is the identity") {
    Fixture f;
    for (auto* p : f.store.all())
      if (p->name.rfind("backbone.stage0.block0.", 0) == 0) fill(p, 0);
    Tape<double> t;
    auto out = f.net.block(t, 0, 0, {t.constant(x), t.constant(y)}, f.net.embeddings(t)[0]);
    CHECK(out[0].value().vec() == x.vec());
    CHECK(out[1].value().vec() == y.vec());
  }
  SUBCASE("without the residual the zeroed block outputs zero") {
    auto c = mini();
    c.residual = false;
    Fixture f(c);
    fill(f.net.block_params(0, 0).branch[0].out.w, 0);
    fill(f.net.block_params(0, 0).branch[0].out.b, 0);
    Tape<double> t;
    auto out = f.net.block(t, 0, 0, {t.constant(x), t.constant(y)}, f.net.embeddings(t)[0]);
    CHECK(l2_norm(out[0].value()) == 0.0);
    CHECK(l2_norm(out[1].value()) > 0.0);
  }
}

TEST_CASE("block shapes and gradients") {
  Fixture f;
  std::mt19937_64 rng(6);
  for (std::size_t B : {1, 3}) {
    Tape<double> t;
    auto x = t.constant(oracle::random_tensor<double>({B, 16, 2, 2}, rng));
    auto out = f.net.block(t, 1, 0, {x, x}, f.net.embeddings(t)[1]);
    CHECK(out[0].shape() == x.shape());
    CHECK(out[1].shape() == x.shape());
  }
  Tape<double> bad;
  auto wrong = bad.constant(Tensor<double>(Shape{1, 16, 3, 3}));
  CHECK_THROWS_AS(f.net.block(bad, 1, 0, {wrong, wrong}, f.net.embeddings(bad)[1]), ShapeError);

  auto xr = oracle::random_tensor<double>({2, 8, 4, 4}, rng), xe = oracle::random_tensor<double>({2, 8, 4, 4}, rng);
  auto w = oracle::random_tensor<double>({2, 8, 4, 4}, rng);
  ad::LossFn<double> loss = [&](Tape<double>& t) {
    auto out = f.net.block(t, 0, 0, {t.constant(xr), t.constant(xe)}, f.net.embeddings(t)[0]);
    auto c = t.constant(w);
    return ad::add(ad::sum_all(ad::mul(out[0], c)), ad::sum_all(ad::mul(out[1], ad::mul(c, c))));
  };
  double worst = 0;
  for (auto* p : f.store.trainable())
    if (p->name.rfind("backbone.stage0.block0.", 0) == 0 || p->name.rfind("backbone.fve.", 0) == 0)
      worst = std::max(worst, ad::fd_check(loss, *p, 1e-6, {16, 1}));
  CHECK(worst < 1e-4);
}

TEST_CASE("later-stage embeddings are projections of the first") {
  Fixture f;
  Tape<double> t;
  auto emb = f.net.embeddings(t);
  for (Modality m : kModalities) {
    const auto& fp = f.net.fve_params(m);
    const auto& table = fp.table->value;
    const std::size_t D = table.shape()[2];
    Tensor<double> cur(Shape{1, D, table.shape()[0], table.shape()[1]});
    for (std::size_t h = 0; h < table.shape()[0]; ++h)
      for (std::size_t w = 0; w < table.shape()[1]; ++w)
        for (std::size_t d = 0; d < D; ++d) cur.at({0, d, h, w}) = table.at({h, w, d});
    for (std::size_t s = 1; s < f.cfg.num_stages(); ++s) {
      cur = depthwise_conv2d(cur, fp.proj[s - 1]->value, {2, 1});
      const auto& got = emb[s][static_cast<std::size_t>(m)].value();
      REQUIRE(got.shape() == Shape{cur.shape()[2], cur.shape()[3], D});
      bool same = true;
      for (std::size_t h = 0; h < cur.shape()[2]; ++h)
        for (std::size_t w = 0; w < cur.shape()[3]; ++w)
          for (std::size_t d = 0; d < D; ++d) same = same && got.at({h, w, d}) == cur.at({0, d, h, w});
      CHECK(same);
    }
  }
  std::size_t tables = 0;
  for (const auto* p : f.store.all())
    if (p->name.find(".table") != std::string::npos) ++tables;
  CHECK(tables == 2);
}

TEST_CASE("backbone features") {
  Fixture f;
  std::mt19937_64 rng(8);
  auto frame = oracle::random_tensor<double>({2, 1, 3, 16, 16}, rng, 0, 1);
  auto ev = oracle::random_tensor<double>({2, 1, 3, 16, 16}, rng, 0, 1);
  Tensor<double> rep(Shape{2, 3, 3, 16, 16}), rep_ev(rep.shape());
  const std::size_t F = 3 * 16 * 16;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 3; ++i) {
      std::copy_n(frame.ptr() + b * F, F, rep.ptr() + (b * 3 + i) * F);
      std::copy_n(ev.ptr() + b * F, F, rep_ev.ptr() + (b * 3 + i) * F);
    }
  Tape<double> t1, t2;
  auto one = f.net.forward(t1, frame, ev, false);
  auto three = f.net.forward(t2, rep, rep_ev, false);
  CHECK(one[0].shape() == Shape{2, f.cfg.feature_dim()});
  CHECK(f.cfg.feature_dim() == 64);
  CHECK(max_abs_diff(one[0].value(), three[0].value()) < 1e-12);
  CHECK(max_abs_diff(one[1].value(), three[1].value()) < 1e-12);

  Tape<double> t3;
  CHECK_THROWS_AS(f.net.forward(t3, frame, rep, false), ShapeError);
}

TEST_CASE("training mode updates batch norm running statistics only") {
  Fixture f;
  const auto before = f.net.stem_params(Modality::rgb).bn1.running_mean->value;
  std::mt19937_64 rng(9);
  auto x = oracle::random_tensor<double>({2, 1, 3, 16, 16}, rng, 0, 1);
  Tape<double> t;
  f.net.forward(t, x, x, true);
  CHECK(f.net.stem_params(Modality::rgb).bn1.running_mean->value.vec() != before.vec());
  CHECK_FALSE(f.net.stem_params(Modality::rgb).bn1.running_mean->trainable);
}

TEST_CASE("parameter count agrees with the analytic report") {
  for (auto cfg : {mini(), BackboneConfig{}}) {
    Fixture f(cfg);
    CHECK(f.net.parameter_count() == profiler::count_costs(cfg, 1, 4).backbone_params);
  }
  const auto full = profiler::count_costs(BackboneConfig::full_size(), 8, 300);
  MESSAGE("full-size backbone parameters: " << full.backbone_params);
}
