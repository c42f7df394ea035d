#include "mmhco/tensor.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace mmhco;

TEST_CASE("elementwise activations at known points") {
  auto z = Tensor<double>::from({0.0});
  CHECK(unary(UnaryOp::sigmoid, z)[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(unary(UnaryOp::silu, z)[0] == 0.0);
  // 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3))) at x = 1, evaluated by hand
  auto one = Tensor<double>::from({1.0});
  CHECK(unary(UnaryOp::gelu, one)[0] == doctest::Approx(0.84119199060827676).epsilon(1e-14));
  CHECK(unary(UnaryOp::exp, one)[0] == doctest::Approx(std::exp(1.0)));
  CHECK(unary(UnaryOp::softplus, z)[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("binary ops require equal shapes except scalars") {
  Tensor<double> a(Shape{2, 3}, 1.0), b(Shape{3, 2}, 2.0);
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  auto s = Tensor<double>::scalar(3.0);
  auto r = mul(a, s);
  CHECK(r.shape() == a.shape());
  CHECK(r[5] == 3.0);
}

TEST_CASE("linear layer") {
  SUBCASE("identity weights") {
    Tensor<double> x(Shape{2}, std::vector<double>{1, 2});
    Tensor<double> W(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
    Tensor<double> b(Shape{2});
    auto y = linear(x, W, b);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 2.0);
  }
  SUBCASE("hand-computed affine") {
    Tensor<double> x(Shape{2}, std::vector<double>{1, 1});
    Tensor<double> W(Shape{2, 1}, std::vector<double>{2, 3});
    Tensor<double> b(Shape{1}, std::vector<double>{1});
    CHECK(linear(x, W, b)[0] == 6.0);
  }
  SUBCASE("zero input yields bias on every row") {
    std::mt19937_64 rng(1);
    auto W = oracle::random_tensor<double>({4, 3}, rng);
    Tensor<double> b(Shape{3}, std::vector<double>{0.5, -1, 2});
    auto y = linear(Tensor<double>(Shape{5, 2, 4}), W, b);
    CHECK(y.shape() == Shape{5, 2, 3});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == b[i % 3]);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(linear(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{4, 2}), Tensor<double>(Shape{2})),
                    ShapeError);
  }
}

TEST_CASE("depthwise convolution") {
  std::mt19937_64 rng(2);
  auto x = oracle::random_tensor<double>({2, 3, 6, 5}, rng);
  SUBCASE("delta kernel is the identity") {
    Tensor<double> k(Shape{3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) k.at({c, 1, 1}) = 1.0;
    auto y = depthwise_conv2d(x, k, {1, 1});
    CHECK(max_abs_diff(x, y) == 0.0);
  }
  SUBCASE("ones kernel on constant field") {
    Tensor<double> one(Shape{1, 1, 5, 5}, 1.0);
    Tensor<double> k(Shape{1, 3, 3}, 1.0);
    auto y = depthwise_conv2d(one, k, {1, 1});
    CHECK(y.at({0, 0, 2, 2}) == 9.0);
    CHECK(y.at({0, 0, 0, 0}) == 4.0);
    CHECK(y.at({0, 0, 0, 2}) == 6.0);
  }
  SUBCASE("stride two halves even spatial dims") {
    Tensor<double> e(Shape{1, 2, 8, 6}, 1.0);
    auto y = depthwise_conv2d(e, Tensor<double>(Shape{2, 3, 3}, 1.0), {2, 1});
    CHECK(y.shape() == Shape{1, 2, 4, 3});
  }
  SUBCASE("no channel mixing") {
    Tensor<double> k(Shape{3, 3, 3});
    k.at({1, 0, 2}) = 1.0;  // only channel 1 has weight
    auto y = depthwise_conv2d(x, k, {1, 1});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 30; ++i) {
        CHECK(y[(b * 3 + 0) * 30 + i] == 0.0);
        CHECK(y[(b * 3 + 2) * 30 + i] == 0.0);
      }
  }
  SUBCASE("kernel larger than padded input") {
    CHECK_THROWS_AS(depthwise_conv2d(Tensor<double>(Shape{1, 1, 2, 2}), Tensor<double>(Shape{1, 5, 5}), {1, 0}),
                    ShapeError);
  }
}

TEST_CASE("dense convolution matches direct summation") {
  std::mt19937_64 rng(3);
  auto x = oracle::random_tensor<double>({2, 3, 7, 6}, rng);
  auto w = oracle::random_tensor<double>({4, 3, 3, 3}, rng);
  auto b = oracle::random_tensor<double>({4}, rng);
  for (std::size_t stride : {1u, 2u}) {
    auto y = conv2d(x, w, b, {stride, 1});
    const std::size_t OH = y.dim(2), OW = y.dim(3);
    double worst = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t oy = 0; oy < OH; ++oy)
          for (std::size_t ox = 0; ox < OW; ++ox) {
            double s = b[o];
            for (std::size_t c = 0; c < 3; ++c)
              for (std::size_t ky = 0; ky < 3; ++ky)
                for (std::size_t kx = 0; kx < 3; ++kx) {
                  const long iy = long(oy * stride + ky) - 1, ix = long(ox * stride + kx) - 1;
                  if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                  s += w.at({o, c, ky, kx}) * x.at({n, c, std::size_t(iy), std::size_t(ix)});
                }
            worst = std::max(worst, std::abs(s - y.at({n, o, oy, ox})));
          }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("layernorm") {
  Tensor<double> g(Shape{3}, 1.0), b(Shape{3}, 0.0);
  SUBCASE("constant row collapses to beta") {
    auto y = layernorm(Tensor<double>(Shape{3}, 1.0), g, b, 1e-5);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("already standardized") {
    Tensor<double> g2(Shape{2}, 1.0), b2(Shape{2}, 0.0);
    auto y = layernorm(Tensor<double>(Shape{2}, std::vector<double>{-1, 1}), g2, b2, 1e-12);
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("random rows have zero mean and unit variance") {
    std::mt19937_64 rng(4);
    Tensor<double> g8(Shape{8}, 1.0), b8(Shape{8}, 0.0);
    for (int trial = 0; trial < 20; ++trial) {
      auto x = oracle::random_tensor<double>({8}, rng, -5, 5);
      auto y = layernorm(x, g8, b8, 1e-12);
      double m = 0, v = 0;
      for (double e : y.data()) m += e;
      m /= 8;
      for (double e : y.data()) v += (e - m) * (e - m);
      v /= 8;
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::abs(v - 1) < 1e-3);
    }
  }
  SUBCASE("eps must be positive") {
    CHECK_THROWS_AS(layernorm(Tensor<double>(Shape{1}, 1.0), Tensor<double>(Shape{1}, 1.0),
                              Tensor<double>(Shape{1}, 0.0), 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("reductions") {
  CHECK(reduce(ReduceOp::mean, Tensor<double>::from({2, 4}), 0).item() == 3.0);
  CHECK(reduce(ReduceOp::argmax, Tensor<double>::from({0, 5, 5}), 0).item() == 1.0);
  auto s = reduce(ReduceOp::sum, Tensor<double>(Shape{2, 3}, 1.0), 1);
  CHECK(s.shape() == Shape{2});
  CHECK(s[0] == 3.0);
  CHECK(s[1] == 3.0);
  CHECK(reduce(ReduceOp::max, Tensor<double>::from({-1, 7, 2}), -1).item() == 7.0);
  CHECK(argmax_rows(Tensor<double>(Shape{1, 3}, std::vector<double>{0.1, 2.0, -1})) == std::vector<std::size_t>{1});
}

TEST_CASE("reshape and permute preserve the multiset of values") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = oracle::random_tensor<float>({2, 3, 4, 5}, rng);
    std::vector<std::size_t> axes{0, 1, 2, 3};
    std::shuffle(axes.begin(), axes.end(), rng);
    auto p = permute(x, axes);
    auto a = x.vec(), b = p.reshape({120}).vec();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    auto back = permute(p, inverse_permutation(axes));
    CHECK(back.vec() == x.vec());
  }
  auto x = Tensor<double>(Shape{2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  auto t = permute(x, {1, 0});
  CHECK(t.vec() == std::vector<double>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("concat and slice") {
  Tensor<double> a(Shape{2, 1}, std::vector<double>{1, 2});
  Tensor<double> b(Shape{2, 2}, std::vector<double>{3, 4, 5, 6});
  auto c = concat(a, b, 1);
  CHECK(c.vec() == std::vector<double>{1, 3, 4, 2, 5, 6});
  CHECK(slice(c, 1, 1, 2).vec() == b.vec());
  CHECK_THROWS_AS(slice(c, 1, 2, 2), ShapeError);
}

TEST_CASE("non-finite values are surfaced") {
  Tensor<float> x(Shape{3}, 1.0f);
  CHECK(all_finite(x));
  x[1] = std::nanf("");
  CHECK_FALSE(all_finite(x));
  CHECK_THROWS_WITH_AS(check_finite(x, "probe"), doctest::Contains("flat index 1"), std::runtime_error);
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(6);
  auto x = oracle::random_tensor<double>({4, 7}, rng, -30, 30);
  auto p = softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += p.at({r, c});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}
