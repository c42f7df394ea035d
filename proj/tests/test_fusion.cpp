#include "mmhco/fusion.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace mmhco;
using namespace mmhco::fusion;
using ad::Tape;

namespace {

Tensor<double> row(std::initializer_list<double> v) { return Tensor<double>(Shape{1, v.size()}, std::vector<double>(v)); }

struct Fixture {
  ad::ParameterStore<double> store;
  std::mt19937_64 rng;
  Fusion<double> fu;
  Fixture(std::size_t F, bool per_channel = false, std::uint64_t seed = 3)
      : rng(seed), fu(F, store, rng, per_channel) {}

  /// Makes the policy output the given logits for every input.
  void pin_logits(const std::vector<double>& logits) {
    auto& w = fu.policy_out().w->value;
    std::fill(w.data().begin(), w.data().end(), 0.0);
    fu.policy_out().b->value = Tensor<double>(Shape{logits.size()}, logits);
  }
};

std::vector<double> frequencies(const std::vector<std::size_t>& choice) {
  std::vector<double> f(kNumStrategies, 0.0);
  for (auto c : choice) f[c] += 1.0 / static_cast<double>(choice.size());
  return f;
}

}  // namespace

TEST_CASE("concatenation") {
  CHECK(mcf(row({1}), row({2})).vec() == std::vector<double>{1, 2});
  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor<double>({3, 5}, rng);
  auto y = mcf(x, x);
  CHECK(y.shape() == Shape{3, 10});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 5; ++c) CHECK(y.at({b, c}) == y.at({b, c + 5}));
  CHECK_THROWS_AS(mcf(x, oracle::random_tensor<double>({3, 4}, rng)), ShapeError);
}

TEST_CASE("common-feature removal") {
  CHECK(mdf(row({2}), row({3})).vec() == std::vector<double>{-4, -3});
  CHECK(mdf(row({1.5, -2}), row({0, 0})).vec() == std::vector<double>{1.5, -2, 0, 0});
  std::mt19937_64 rng(2);
  auto f = oracle::random_tensor<double>({2, 4}, rng);
  auto y = mdf(f, f);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = f.at({b, c});
      CHECK(y.at({b, c}) == y.at({b, c + 4}));
      CHECK(y.at({b, c}) == doctest::Approx(v - v * v).epsilon(1e-15));
    }
  Tape<double> t;
  CHECK(mdf(t.constant(row({2})), t.constant(row({3}))).value().vec() == std::vector<double>{-4, -3});
}

TEST_CASE("weighted concatenation") {
  for (bool per_channel : {false, true}) {
    Fixture fx(3, per_channel);
    auto& w = fx.fu.msf_params().w->value;
    std::fill(w.data().begin(), w.data().end(), 0.0);
    std::fill(fx.fu.msf_params().b->value.data().begin(), fx.fu.msf_params().b->value.data().end(), 0.0);
    Tape<double> t;
    auto y = fx.fu.msf(t, t.constant(row({2, -4, 6})), t.constant(row({1, 3, -5})));
    CHECK(y.value().vec() == std::vector<double>{1, -2, 3, 0.5, 1.5, -2.5});
  }

  Fixture fx(4, false, 9);
  std::mt19937_64 rng(4);
  auto fr = oracle::random_tensor<double>({6, 4}, rng, -5, 5), fe = oracle::random_tensor<double>({6, 4}, rng, -5, 5);
  for (auto& v : fx.fu.msf_params().w->value.data()) v *= 100;
  Tape<double> t;
  for (double v : fx.fu.msf_weights(t, t.constant(fr), t.constant(fe)).value().data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  ad::LossFn<double> loss = [&](Tape<double>& tp) {
    auto y = fx.fu.msf(tp, tp.constant(fr), tp.constant(fe));
    return ad::sum_all(ad::mul(y, y));
  };
  CHECK(ad::fd_check(loss, *fx.fu.msf_params().w, 1e-6) < 1e-4);
  CHECK(ad::fd_check(loss, *fx.fu.msf_params().b, 1e-6) < 1e-4);
}

TEST_CASE("route sampling frequencies") {
  const std::size_t N = 10000;
  std::mt19937_64 rng(5);
  Tensor<double> fr(Shape{N, 2}), fe(Shape{N, 2});

  SUBCASE("dominant logit") {
    Fixture fx(2);
    fx.pin_logits({10, -10, -10});
    Tape<double> t;
    auto b = fx.fu.route(t, t.constant(fr), t.constant(fe), Mode::route, 1.0, true, rng);
    CHECK(frequencies(b.choice)[0] > 0.99);
  }
  SUBCASE("equal logits") {
    Fixture fx(2);
    fx.pin_logits({0.4, 0.4, 0.4});
    Tape<double> t;
    auto b = fx.fu.route(t, t.constant(fr), t.constant(fe), Mode::route, 1.0, true, rng);
    for (double f : frequencies(b.choice)) CHECK(std::abs(f - 1.0 / 3) < 0.02);
  }
  SUBCASE("uniform random mode") {
    Fixture fx(2);
    Tape<double> t;
    auto b = fx.fu.route(t, t.constant(fr), t.constant(fe), Mode::random, 1.0, false, rng);
    for (double f : frequencies(b.choice)) CHECK(std::abs(f - 1.0 / 3) < 0.02);
  }
  SUBCASE("softmax over 1e5 draws") {
    const std::vector<double> logits{1.0, -0.5, 0.2};
    Fixture fx(2);
    fx.pin_logits(logits);
    Tensor<double> big(Shape{100000, 2});
    Tape<double> t;
    auto b = fx.fu.route(t, t.constant(big), t.constant(big), Mode::route, 1.0, true, rng);
    const auto f = frequencies(b.choice);
    double z = 0;
    for (double l : logits) z += std::exp(l);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(f[k] - std::exp(logits[k]) / z) < 0.01);
  }
}

TEST_CASE("inference routes by argmax regardless of seed") {
  Fixture fx(2);
  fx.pin_logits({0.1, 0.3, 0.2});
  for (std::uint64_t seed : {0, 1, 2, 99}) {
    std::mt19937_64 rng(seed);
    Tape<double> t;
    auto b = fx.fu.route(t, t.constant(Tensor<double>(Shape{4, 2})), t.constant(Tensor<double>(Shape{4, 2})),
                         Mode::route, 1.0, false, rng);
    for (auto c : b.choice) CHECK(c == 1);
  }
}

TEST_CASE("routed output equals the selected strategy") {
  Fixture fx(5, false, 11);
  for (auto& v : fx.fu.policy_out().w->value.data()) v *= 300;
  std::mt19937_64 rng(6);
  for (Mode mode : {Mode::route, Mode::mcf, Mode::mdf, Mode::msf, Mode::random})
    for (bool training : {false, true}) {
      Tape<double> t;
      auto fr = t.constant(oracle::random_tensor<double>({12, 5}, rng));
      auto fe = t.constant(oracle::random_tensor<double>({12, 5}, rng));
      auto b = fx.fu.route(t, fr, fe, mode, 0.5, training, rng);
      REQUIRE(b.fused.shape() == Shape{12, 10});
      for (std::size_t i = 0; i < 12; ++i) {
        const auto& ref = fx.fu.strategy(t, static_cast<Strategy>(b.choice[i]), fr, fe).value();
        for (std::size_t j = 0; j < 10; ++j) CHECK(b.fused.value().at({i, j}) == ref.at({i, j}));
      }
      if (mode == Mode::mcf || mode == Mode::mdf || mode == Mode::msf)
        for (auto c : b.choice) CHECK(c == static_cast<std::size_t>(mode) - 1);
    }
}

TEST_CASE("straight-through gradient reaches the policy only in training") {
  std::mt19937_64 rng(7);
  auto fr = oracle::random_tensor<double>({4, 3}, rng), fe = oracle::random_tensor<double>({4, 3}, rng);
  for (bool training : {true, false}) {
    Fixture fx(3);
    Tape<double> t;
    auto b = fx.fu.route(t, t.constant(fr), t.constant(fe), Mode::route, 1.0, training, rng);
    t.backward(ad::sum_all(ad::mul(b.fused, b.fused)));
    const double g = l2_norm(fx.fu.policy_out().b->grad) + l2_norm(fx.fu.policy_hidden().w->grad);
    if (training)
      CHECK(g > 0.0);
    else
      CHECK(g == 0.0);
  }
}

TEST_CASE("route argument checks") {
  Fixture fx(3);
  std::mt19937_64 rng(8);
  Tape<double> t;
  auto x = t.constant(Tensor<double>(Shape{2, 3}));
  CHECK_THROWS_AS(fx.fu.route(t, x, x, Mode::route, 0.0, true, rng), std::invalid_argument);
  auto narrow = t.constant(Tensor<double>(Shape{2, 2}));
  CHECK_THROWS_AS(fx.fu.route(t, narrow, narrow, Mode::mcf, 1.0, false, rng), ShapeError);
  CHECK(parse_mode("random") == Mode::random);
  CHECK(std::string(mode_name(Mode::msf)) == "msf");
  CHECK_THROWS_AS(parse_mode("best"), std::invalid_argument);
}
