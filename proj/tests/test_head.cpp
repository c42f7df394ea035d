#include "mmhco/head.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace mmhco;
using namespace mmhco::head;
using ad::Tape;

namespace {

Prediction<double> from_probs(Tape<double>& t, const Tensor<double>& probs) {
  Tensor<double> logits(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) logits[i] = std::log(probs[i]);
  Prediction<double> p;
  p.logits = t.constant(logits);
  p.probs = t.constant(probs);
  return p;
}

}  // namespace

TEST_CASE("head output") {
  ad::ParameterStore<double> store;
  std::mt19937_64 rng(1);
  Head<double> head(6, 4, store, rng);
  auto x = oracle::random_tensor<double>({5, 6}, rng, -3, 3);
  Tape<double> t;
  auto p = head.forward(t, t.constant(x));
  REQUIRE(p.probs.shape() == Shape{5, 4});
  for (std::size_t b = 0; b < 5; ++b) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double v = p.probs.value().at({b, c});
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }

  std::fill(head.classifier().w->value.data().begin(), head.classifier().w->value.data().end(), 0.0);
  Tape<double> t2;
  for (double v : head.forward(t2, t2.constant(x)).probs.value().data()) CHECK(v == doctest::Approx(0.25));

  ad::ParameterStore<double> s2;
  CHECK_THROWS_AS(Head<double>(6, 1, s2, rng), std::invalid_argument);
}

TEST_CASE("loss values") {
  SUBCASE("uniform over ten classes") {
    Tape<double> t;
    auto p = from_probs(t, Tensor<double>(Shape{2, 10}, 0.1));
    CHECK(loss(p, {3, 7}, LossMode::ce).value().item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(loss(p, {3, 7}, LossMode::ce).value().item() == doctest::Approx(2.3026).epsilon(1e-4));
  }
  SUBCASE("literal form by hand") {
    Tape<double> t;
    auto p = from_probs(t, Tensor<double>(Shape{1, 2}, std::vector<double>{0.7, 0.3}));
    const double l = loss(p, {0}, LossMode::literal).value().item();
    CHECK(l == doctest::Approx(-(std::log(0.7) + std::log(0.7)) / 2).epsilon(1e-12));
    CHECK(l == doctest::Approx(0.3567).epsilon(1e-4));
  }
  SUBCASE("confident correct prediction is near zero and bounded by the clamp") {
    Tape<double> t;
    auto logits = Tensor<double>(Shape{1, 3}, std::vector<double>{0, 60, 0});
    Prediction<double> p{t.constant(logits), ad::softmax(t.constant(logits))};
    const double ce = loss(p, {1}, LossMode::ce).value().item();
    CHECK(ce >= 0.0);
    CHECK(ce <= -std::log(1 - 1e-12) + 1e-15);
    CHECK(loss(p, {1}, LossMode::literal).value().item() < 1e-12);
  }
  SUBCASE("zero probability is clamped") {
    Tape<double> t;
    Prediction<double> p{t.constant(Tensor<double>(Shape{1, 2}, std::vector<double>{-1e9, 0})),
                         t.constant(Tensor<double>(Shape{1, 2}, std::vector<double>{0.0, 1.0}))};
    const double l = loss(p, {0}, LossMode::literal).value().item();
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
  }
}

TEST_CASE("losses are non-negative") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> t;
    auto logits = t.constant(oracle::random_tensor<double>({3, 5}, rng, -4, 4));
    Prediction<double> p{logits, ad::softmax(logits)};
    const std::vector<std::size_t> labels{static_cast<std::size_t>(trial % 5), 0, 4};
    CHECK(loss(p, labels, LossMode::ce).value().item() >= 0.0);
    CHECK(loss(p, labels, LossMode::literal).value().item() >= 0.0);
  }
}

TEST_CASE("cross-entropy gradient is (probs - y) / B") {
  std::mt19937_64 rng(3);
  const std::size_t B = 4, C = 5;
  ad::Parameter<double> logits("logits", oracle::random_tensor<double>({B, C}, rng, -2, 2));
  const std::vector<std::size_t> labels{1, 0, 4, 4};
  ad::LossFn<double> f = [&](Tape<double>& t) {
    auto l = t.param(logits);
    return loss(Prediction<double>{l, ad::softmax(l)}, labels, LossMode::ce);
  };
  Tape<double> t;
  t.backward(f(t));
  const auto probs = mmhco::softmax(logits.value);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double expect = (probs.at({b, c}) - (labels[b] == c ? 1.0 : 0.0)) / B;
      CHECK(logits.grad.at({b, c}) == doctest::Approx(expect).epsilon(1e-12));
    }
  logits.zero_grad();
  CHECK(ad::fd_check(f, logits, 1e-6) < 1e-5);
}

TEST_CASE("one-hot labels") {
  Tensor<double> y(Shape{3, 3}, std::vector<double>{0, 1, 0, 1, 0, 0, 0, 0, 1});
  CHECK(labels_from_onehot(y) == std::vector<std::size_t>{1, 0, 2});
  Tensor<double> two(Shape{1, 3}, std::vector<double>{1, 1, 0});
  CHECK_THROWS_AS(labels_from_onehot(two), std::invalid_argument);
  Tensor<double> soft(Shape{1, 2}, std::vector<double>{0.5, 0.5});
  CHECK_THROWS_AS(labels_from_onehot(soft), std::invalid_argument);
  Tensor<double> none(Shape{1, 2});
  CHECK_THROWS_AS(labels_from_onehot(none), std::invalid_argument);
}

TEST_CASE("top-k accuracy") {
  Tensor<double> one(Shape{1, 3}, std::vector<double>{0.1, 2.0, -1});
  CHECK(topk_accuracy(one, {1}, 1) == 1.0);
  CHECK(topk_accuracy(one, {0}, 1) == 0.0);
  CHECK(topk_accuracy(one, {2}, 3) == 1.0);

  Tensor<double> four(Shape{4, 2}, std::vector<double>{1, 0, 0, 1, 1, 0, 1, 0});
  CHECK(topk_accuracy(four, {0, 1, 0, 1}, 1) == 0.75);

  SUBCASE("ties go to the lower index") {
    Tensor<double> tie(Shape{1, 3}, std::vector<double>{1, 1, 1});
    CHECK(topk_accuracy(tie, {0}, 1) == 1.0);
    CHECK(topk_accuracy(tie, {1}, 1) == 0.0);
    CHECK(topk_accuracy(tie, {2}, 2) == 0.0);
    CHECK(rank_of(tie.ptr(), 3, 2) == 2);
  }
  SUBCASE("invariant under monotone transforms") {
    std::mt19937_64 rng(4);
    auto s = oracle::random_tensor<double>({50, 6}, rng, -3, 3);
    std::vector<std::size_t> labels(50);
    for (std::size_t i = 0; i < 50; ++i) labels[i] = i % 6;
    Tensor<double> m(s.shape());
    for (std::size_t i = 0; i < s.size(); ++i) m[i] = std::exp(2 * s[i]) + 7;
    CHECK(topk_accuracy(s, labels, 1) == topk_accuracy(m, labels, 1));
    CHECK(topk_accuracy(s, labels, 5) >= topk_accuracy(s, labels, 1));
  }
  CHECK_THROWS_AS(topk_accuracy(one, {1}, 4), std::invalid_argument);
  CHECK_THROWS_AS(topk_accuracy(one, {1}, 0), std::invalid_argument);
  CHECK(parse_loss_mode("literal") == LossMode::literal);
  CHECK_THROWS_AS(parse_loss_mode("mse"), std::invalid_argument);
}
