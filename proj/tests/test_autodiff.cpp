#include "mmhco/autodiff.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <functional>
#include <random>

using namespace mmhco;
using namespace mmhco::ad;

namespace {

// Contracts an op output against a fixed random tensor so every Jacobian entry matters.
template <class T>
Var<T> project(Var<T> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = oracle::random_tensor<T>(y.shape(), rng);
  return sum_all(mul(y, y.tape->constant(r)));
}

template <class T>
struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<Var<T>(Tape<T>&, std::vector<Var<T>>&)> build;
  double lo = -1, hi = 1;
};

template <class T>
std::vector<OpCase<T>> op_cases() {
  using V = std::vector<Var<T>>;
  std::vector<OpCase<T>> cases;
  auto un = [&](const char* n, UnaryOp op, double lo = -2, double hi = 2) {
    cases.push_back({n, {{3, 4}}, [op](Tape<T>&, V& v) { return unary(op, v[0]); }, lo, hi});
  };
  un("sigmoid", UnaryOp::sigmoid);
  un("silu", UnaryOp::silu);
  un("gelu", UnaryOp::gelu);
  un("exp", UnaryOp::exp);
  un("softplus", UnaryOp::softplus);
  un("tanh", UnaryOp::tanh);
  un("log", UnaryOp::log, 0.5, 2);
  cases.push_back({"add", {{2, 3}, {2, 3}}, [](Tape<T>&, V& v) { return add(v[0], v[1]); }});
  cases.push_back({"sub", {{2, 3}, {2, 3}}, [](Tape<T>&, V& v) { return sub(v[0], v[1]); }});
  cases.push_back({"mul", {{2, 3}, {2, 3}}, [](Tape<T>&, V& v) { return mul(v[0], v[1]); }});
  cases.push_back({"scale", {{5}}, [](Tape<T>&, V& v) { return scale(v[0], T(-1.5)); }});
  cases.push_back({"linear", {{2, 3, 4}, {4, 5}, {5}}, [](Tape<T>&, V& v) { return linear(v[0], v[1], v[2]); }});
  cases.push_back({"matmul", {{3, 4}, {4, 2}}, [](Tape<T>&, V& v) { return matmul(v[0], v[1]); }});
  cases.push_back({"depthwise_conv2d", {{2, 3, 5, 4}, {3, 3, 3}},
                   [](Tape<T>&, V& v) { return depthwise_conv2d(v[0], v[1], {1, 1}); }});
  cases.push_back({"depthwise_conv2d_s2", {{1, 2, 6, 6}, {2, 3, 3}},
                   [](Tape<T>&, V& v) { return depthwise_conv2d(v[0], v[1], {2, 1}); }});
  cases.push_back({"conv2d", {{2, 2, 5, 6}, {3, 2, 3, 3}, {3}},
                   [](Tape<T>&, V& v) { return conv2d(v[0], v[1], v[2], {2, 1}); }});
  cases.push_back({"add_channel_bias", {{2, 3, 2, 2}, {3}}, [](Tape<T>&, V& v) { return add_channel_bias(v[0], v[1]); }});
  cases.push_back({"layernorm", {{3, 6}, {6}, {6}}, [](Tape<T>&, V& v) { return layernorm(v[0], v[1], v[2], T(1e-5)); }});
  cases.push_back({"batchnorm2d", {{3, 2, 3, 3}, {2}, {2}},
                   [](Tape<T>&, V& v) { return batchnorm2d(v[0], v[1], v[2], T(1e-5)); }});
  cases.push_back({"batchnorm2d_fixed", {{2, 2, 2, 3}, {2}, {2}}, [](Tape<T>&, V& v) {
                     Tensor<T> m(Shape{2}, T(0.1)), var(Shape{2}, T(0.7));
                     return batchnorm2d_fixed(v[0], m, var, v[1], v[2], T(1e-5));
                   }});
  cases.push_back({"reduce_mean", {{2, 3, 4}}, [](Tape<T>&, V& v) { return reduce(ReduceOp::mean, v[0], 1); }});
  cases.push_back({"reduce_sum", {{2, 3, 4}}, [](Tape<T>&, V& v) { return reduce(ReduceOp::sum, v[0], -1); }});
  cases.push_back({"mean_all", {{2, 3}}, [](Tape<T>&, V& v) { return mean_all(v[0]); }});
  cases.push_back({"reshape", {{2, 6}}, [](Tape<T>&, V& v) { return reshape(v[0], {3, 4}); }});
  cases.push_back({"permute", {{2, 3, 4}}, [](Tape<T>&, V& v) { return permute(v[0], {2, 0, 1}); }});
  cases.push_back({"slice", {{2, 5}}, [](Tape<T>&, V& v) { return slice(v[0], 1, 1, 3); }});
  cases.push_back({"concat", {{2, 2}, {2, 3}}, [](Tape<T>&, V& v) { return concat(v[0], v[1], 1); }});
  cases.push_back({"mul_broadcast", {{3, 2, 4}, {2, 4}}, [](Tape<T>&, V& v) { return mul_broadcast(v[0], v[1]); }});
  cases.push_back({"scale_rows", {{3, 4}, {3, 1}}, [](Tape<T>&, V& v) { return scale_rows(v[0], v[1]); }});
  cases.push_back({"softmax", {{2, 5}}, [](Tape<T>&, V& v) { return softmax(v[0]); }});
  cases.push_back({"softmax_cross_entropy", {{3, 4}}, [](Tape<T>&, V& v) {
                     return softmax_cross_entropy(v[0], std::vector<std::size_t>{0, 3, 1});
                   }});
  cases.push_back({"binary_cross_entropy", {{2, 3}}, [](Tape<T>&, V& v) {
                     return binary_cross_entropy_probs(softmax(v[0]), std::vector<std::size_t>{2, 0});
                   }});
  cases.push_back({"gumbel_softmax_soft", {{2, 3}}, [](Tape<T>&, V& v) {
                     Tensor<T> noise(Shape{2, 3}, std::vector<T>{T(0.3), T(-0.2), T(1.1), T(0.0), T(0.5), T(-0.7)});
                     return gumbel_softmax(v[0], noise, T(0.8), false);
                   }});
  return cases;
}

template <class T>
double worst_fd_error(const OpCase<T>& c, double h) {
  std::mt19937_64 rng(11);
  std::vector<Parameter<T>> params;
  params.reserve(c.shapes.size());
  for (std::size_t i = 0; i < c.shapes.size(); ++i)
    params.emplace_back("in" + std::to_string(i), oracle::random_tensor<T>(c.shapes[i], rng, c.lo, c.hi));
  // variance parameters of batchnorm/layernorm gammas stay away from zero automatically
  LossFn<T> f = [&](Tape<T>& t) {
    std::vector<Var<T>> vars;
    for (auto& p : params) vars.push_back(t.param(p));
    Var<T> y = c.build(t, vars);
    return y.value().size() == 1 ? y : project(y, 99);
  };
  double worst = 0;
  for (auto& p : params) worst = std::max(worst, fd_check(f, p, h));
  return worst;
}

}  // namespace

TEST_CASE("backward on closed-form losses") {
  SUBCASE("sum gives ones") {
    Tape<double> t;
    auto x = t.variable(Tensor<double>(Shape{2, 3}, 0.7));
    t.backward(sum_all(x));
    for (double g : t.grad(x)->data()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares gives 2x") {
    Tape<double> t;
    auto x = t.variable(Tensor<double>::from({1, 2}));
    t.backward(sum_all(mul(x, x)));
    CHECK(t.grad(x)->vec() == std::vector<double>{2, 4});
  }
  SUBCASE("linear then sigmoid matches finite differences") {
    std::mt19937_64 rng(3);
    Parameter<double> W("W", oracle::random_tensor<double>({3, 2}, rng));
    Parameter<double> b("b", oracle::random_tensor<double>({2}, rng));
    auto x = oracle::random_tensor<double>({4, 3}, rng);
    LossFn<double> f = [&](Tape<double>& t) { return sum_all(sigmoid(linear(t.constant(x), t.param(W), t.param(b)))); };
    CHECK(fd_check(f, W, 1e-6) < 1e-5);
    CHECK(fd_check(f, b, 1e-6) < 1e-5);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape<double> t;
    auto x = t.variable(Tensor<double>(Shape{2}));
    CHECK_THROWS_AS(t.backward(x), ShapeError);
  }
}

TEST_CASE("parameters used twice receive one accumulated gradient") {
  Parameter<double> p("p", Tensor<double>::from({3.0}));
  Tape<double> t;
  auto a = t.param(p);
  auto b = t.param(p);
  CHECK(a.id == b.id);
  t.backward(sum_all(mul(a, b)));
  CHECK(p.grad[0] == 6.0);
}

TEST_CASE("non-trainable leaves are untouched") {
  Parameter<double> frozen("f", Tensor<double>::from({2.0}), false);
  Parameter<double> live("l", Tensor<double>::from({5.0}));
  Tape<double> t;
  t.backward(sum_all(mul(t.param(frozen), t.param(live))));
  CHECK(frozen.grad[0] == 0.0);
  CHECK(live.grad[0] == 2.0);
}

TEST_CASE("repeated backward with zeroing is deterministic") {
  std::mt19937_64 rng(8);
  Parameter<double> W("W", oracle::random_tensor<double>({4, 4}, rng));
  auto x = oracle::random_tensor<double>({3, 4}, rng);
  Tape<double> t;
  auto loss = sum_all(gelu(linear(t.constant(x), t.param(W), t.constant(Tensor<double>(Shape{4})))));
  t.backward(loss);
  const auto first = W.grad;
  W.zero_grad();
  t.backward(loss);
  CHECK(W.grad.vec() == first.vec());
}

TEST_CASE("fd_check examples") {
  Parameter<double> x("x", Tensor<double>::from({3.0}));
  LossFn<double> sq = [&](Tape<double>& t) {
    auto v = t.param(x);
    return sum_all(mul(v, v));
  };
  CHECK(fd_check(sq, x, 1e-6) < 1e-8);
  CHECK_THROWS_AS(fd_check(sq, x, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fd_check(sq, x, -1e-3), std::invalid_argument);

  std::mt19937_64 rng(12);
  Parameter<double> g("gamma", oracle::random_tensor<double>({6}, rng, 0.5, 1.5));
  Parameter<double> in("x", oracle::random_tensor<double>({4, 6}, rng));
  LossFn<double> ln = [&](Tape<double>& t) {
    auto y = layernorm(t.param(in), t.param(g), t.constant(Tensor<double>(Shape{6})), 1e-5);
    return project(silu(layernorm(y, t.param(g), t.constant(Tensor<double>(Shape{6})), 1e-5)), 5);
  };
  CHECK(fd_check(ln, in, 1e-6) < 1e-4);
  CHECK(fd_check(ln, g, 1e-6) < 1e-4);
}

TEST_CASE("every registered op passes the finite-difference check in f64") {
  for (const auto& c : op_cases<double>()) {
    CAPTURE(c.name);
    CHECK(worst_fd_error(c, 1e-6) < 1e-4);
  }
}

TEST_CASE("every registered op passes the finite-difference check in f32") {
  for (const auto& c : op_cases<float>()) {
    CAPTURE(c.name);
    CHECK(worst_fd_error(c, 1e-2) < 1e-2);
  }
}

TEST_CASE("sgd step") {
  auto run = [](double p0, double g0, double lr, double wd) {
    Parameter<double> p("p", Tensor<double>::from({p0}));
    p.grad[0] = g0;
    sgd_step<double>({&p}, lr, wd);
    CHECK(p.grad[0] == 0.0);
    return p.value[0];
  };
  CHECK(run(1, 0, 0.001, 0) == 1.0);
  CHECK(run(0, 1, 0.001, 0) == doctest::Approx(-0.001).epsilon(1e-15));
  CHECK(run(1, 0, 0.001, 0.0001) == doctest::Approx(0.9999999).epsilon(1e-15));

  Parameter<double> frozen("f", Tensor<double>::from({1.0}), false);
  frozen.grad[0] = 5;
  sgd_step<double>({&frozen}, 0.1, 0.1);
  CHECK(frozen.value[0] == 1.0);
}

TEST_CASE("straight-through gumbel: hard forward, soft backward") {
  Tape<double> t;
  auto logits = t.variable(Tensor<double>(Shape{1, 3}, std::vector<double>{0.1, 0.3, 0.2}));
  Tensor<double> noise(Shape{1, 3});
  auto y = gumbel_softmax(logits, noise, 1.0, true);
  CHECK(y.value().vec() == std::vector<double>{0, 1, 0});
  t.backward(project(y, 4));
  double mag = 0;
  for (double g : t.grad(logits)->data()) mag += std::abs(g);
  CHECK(mag > 0);
  CHECK_THROWS_AS(gumbel_softmax(logits, noise, 0.0, true), std::invalid_argument);
}

TEST_CASE("parameter store") {
  ParameterStore<float> store;
  store.add("a", Tensor<float>(Shape{2, 3}));
  store.add("b", Tensor<float>(Shape{4}), false);
  CHECK(store.count_values() == 6);
  CHECK(store.count_values(false) == 10);
  CHECK(store.trainable().size() == 1);
  CHECK_THROWS(store.add("a", Tensor<float>(Shape{1})));
  CHECK_THROWS_AS(store.get("zzz"), std::out_of_range);
}
