#include "mmhco/verify.hpp"

#include "mmhco/events.hpp"
#include "mmhco/fusion.hpp"
#include "mmhco/head.hpp"
#include "mmhco/spectral.hpp"
#include "mmhco/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

namespace mmhco::verify {

namespace fs = std::filesystem;

Suite parse_suite(const std::string& s) {
  if (s == "grad") return Suite::grad;
  if (s == "spectral") return Suite::spectral;
  if (s == "fusion") return Suite::fusion;
  if (s == "ingest") return Suite::ingest;
  if (s == "all") return Suite::all;
  throw std::invalid_argument("unknown suite '" + s + "' (expected grad, spectral, fusion, ingest or all)");
}

const char* suite_name(Suite s) {
  switch (s) {
    case Suite::grad: return "grad";
    case Suite::spectral: return "spectral";
    case Suite::fusion: return "fusion";
    case Suite::ingest: return "ingest";
    case Suite::all: return "all";
  }
  return "?";
}

bool Report::passed() const { return failures() == 0; }

std::size_t Report::failures() const {
  return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const Check& c) { return !c.passed; }));
}

std::string Report::format() const {
  std::ostringstream os;
  for (const auto& c : checks)
    os << (c.passed ? "PASS " : "FAIL ") << c.suite << '/' << c.name << ": " << c.detail << " ("
       << std::setprecision(3) << c.seconds << " s)\n";
  os << checks.size() - failures() << '/' << checks.size() << " checks passed\n";
  return os.str();
}

SpectralOps SpectralOps::library() {
  return {[](const Tensor<double>& x) { return spectral::dct2(x); },
          [](const Tensor<double>& x) { return spectral::idct2(x); }};
}

Tensor<double> dct2_direct(const Tensor<double>& x) {
  if (x.rank() != 2) throw ShapeError("dct2_direct: expected [H, W], got " + shape_str(x.shape()));
  const std::size_t H = x.shape()[0], W = x.shape()[1];
  auto alpha = [](std::size_t u, std::size_t n) { return std::sqrt((u == 0 ? 1.0 : 2.0) / static_cast<double>(n)); };
  auto basis = [](std::size_t i, std::size_t u, std::size_t n) {
    return std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) * static_cast<double>(u) /
                    (2.0 * static_cast<double>(n)));
  };
  Tensor<double> out(Shape{H, W});
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) {
      double s = 0;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) s += x[h * W + w] * basis(h, u, H) * basis(w, v, W);
      out[u * W + v] = alpha(u, H) * alpha(v, W) * s;
    }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

/// Runs `body`, which returns (passed, detail); exceptions count as failures.
template <class F>
void record(Report& r, const char* suite, const std::string& name, F&& body) {
  const auto t0 = Clock::now();
  Check c;
  c.suite = suite;
  c.name = name;
  try {
    std::tie(c.passed, c.detail) = body();
  } catch (const std::exception& e) {
    c.passed = false;
    c.detail = std::string("threw: ") + e.what();
  }
  c.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  r.checks.push_back(std::move(c));
}

std::pair<bool, std::string> below(double err, double tol, const std::string& what = "max error") {
  return {err < tol, what + " " + fmt_double(err) + " (limit " + fmt_double(tol) + ")"};
}

Tensor<double> uniform(const Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> U(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = U(rng);
  return t;
}

// ---------------------------------------------------------------------------
// Spectral

/// U_t for u[C, H, W] with the transforms under test.
Tensor<double> heat(const SpectralOps& ops, const Tensor<double>& u, const Tensor<double>& k, double t) {
  const std::size_t H = u.shape()[1], W = u.shape()[2];
  auto decay = spectral::build_decay(spectral::make_grid<double>(H, W), k, t);
  Tensor<double> f = ops.dct2(u);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] *= decay.values[i];
  return ops.idct2(f);
}

std::vector<double> channel_means(const Tensor<double>& u) {
  const std::size_t C = u.shape()[0], P = u.size() / C;
  std::vector<double> m(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < P; ++p) m[c] += u[c * P + p];
    m[c] /= static_cast<double>(P);
  }
  return m;
}

}  // namespace

void spectral_suite(Report& r, const Options& opts) {
  const char* S = "spectral";
  const auto& ops = opts.spectral;
  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> side(1, 32), chans(1, 3);
  std::vector<Tensor<double>> inputs;
  for (std::size_t i = 0; i < opts.random_shapes; ++i) inputs.push_back(uniform({chans(rng), side(rng), side(rng)}, rng));

  record(r, S, "transform.round_trip", [&] {
    double worst = 0;
    for (const auto& x : inputs) worst = std::max(worst, max_abs_diff(ops.idct2(ops.dct2(x)), x));
    return below(worst, 1e-6);
  });
  record(r, S, "transform.isometry", [&] {
    double worst = 0;
    for (const auto& x : inputs) worst = std::max(worst, std::abs(l2_norm(ops.dct2(x)) - l2_norm(x)));
    return below(worst, 1e-6, "max norm change");
  });
  for (std::size_t n : {2, 4}) {
    record(r, S, "transform.direct_sum_" + std::to_string(n) + "x" + std::to_string(n), [&] {
      double worst = 0;
      for (int trial = 0; trial < 10; ++trial) {
        auto x = uniform({n, n}, rng);
        worst = std::max(worst, max_abs_diff(ops.dct2(x), dct2_direct(x)));
      }
      return below(worst, 1e-10);
    });
  }

  struct Draw {
    Tensor<double> u, k;
    double t1, t2;
  };
  std::vector<Draw> draws;
  std::uniform_real_distribution<double> time(0.05, 2.0);
  for (std::size_t i = 0; i < opts.heat_draws; ++i) {
    const Shape s{chans(rng), side(rng), side(rng)};
    draws.push_back({uniform(s, rng), uniform(s, rng, 0.01, 2.0), time(rng), time(rng)});
  }
  record(r, S, "heat.zero_diffusivity_identity", [&] {
    double worst = 0;
    for (const auto& d : draws)
      worst = std::max(worst, max_abs_diff(heat(ops, d.u, Tensor<double>(d.k.shape()), d.t1), d.u));
    return below(worst, 1e-6);
  });
  record(r, S, "heat.mean_conservation", [&] {
    double worst = 0;
    for (const auto& d : draws) {
      const auto a = channel_means(d.u), b = channel_means(heat(ops, d.u, d.k, d.t1));
      for (std::size_t c = 0; c < a.size(); ++c) worst = std::max(worst, std::abs(a[c] - b[c]));
    }
    return below(worst, 1e-6, "max mean change");
  });
  record(r, S, "heat.energy_non_expansion", [&] {
    std::size_t violations = 0;
    double worst = 0;
    for (const auto& d : draws) {
      const double n0 = l2_norm(d.u), n1 = l2_norm(heat(ops, d.u, d.k, d.t1));
      if (n1 > n0) ++violations;
      worst = std::max(worst, n1 / n0);
    }
    return std::make_pair(violations == 0, std::to_string(violations) + " of " + std::to_string(draws.size()) +
                                               " draws expanded, max ratio " + fmt_double(worst));
  });
  record(r, S, "heat.semigroup", [&] {
    double worst = 0;
    for (const auto& d : draws) {
      const auto two_steps = heat(ops, heat(ops, d.u, d.k, d.t2), d.k, d.t1);
      worst = std::max(worst, max_abs_diff(two_steps, heat(ops, d.u, d.k, d.t1 + d.t2)));
    }
    return below(worst, 1e-5);
  });
  record(r, S, "heat.uniform_field_fixed", [&] {
    double worst = 0;
    for (const auto& d : draws) {
      Tensor<double> u(d.u.shape(), 0.37);
      worst = std::max(worst, max_abs_diff(heat(ops, u, d.k, d.t1), u));
    }
    return below(worst, 1e-6);
  });
}

// ---------------------------------------------------------------------------
// Gradients

namespace {

using ad::Var;
using VarList = std::vector<Var<double>>;

struct GradCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<Var<double>(ad::Tape<double>&, VarList&)> build;
  double lo = -1, hi = 1;
};

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> c;
  auto un = [&](const char* n, UnaryOp op, double lo = -2, double hi = 2) {
    c.push_back({n, {{3, 4}}, [op](ad::Tape<double>&, VarList& v) { return ad::unary(op, v[0]); }, lo, hi});
  };
  un("sigmoid", UnaryOp::sigmoid);
  un("silu", UnaryOp::silu);
  un("gelu", UnaryOp::gelu);
  un("exp", UnaryOp::exp);
  un("softplus", UnaryOp::softplus);
  un("tanh", UnaryOp::tanh);
  un("log", UnaryOp::log, 0.5, 2);
  c.push_back({"add", {{2, 3}, {2, 3}}, [](auto&, VarList& v) { return ad::add(v[0], v[1]); }});
  c.push_back({"sub", {{2, 3}, {2, 3}}, [](auto&, VarList& v) { return ad::sub(v[0], v[1]); }});
  c.push_back({"mul", {{2, 3}, {2, 3}}, [](auto&, VarList& v) { return ad::mul(v[0], v[1]); }});
  c.push_back({"scale", {{5}}, [](auto&, VarList& v) { return ad::scale(v[0], -1.5); }});
  c.push_back({"linear", {{2, 3, 4}, {4, 5}, {5}}, [](auto&, VarList& v) { return ad::linear(v[0], v[1], v[2]); }});
  c.push_back({"matmul", {{3, 4}, {4, 2}}, [](auto&, VarList& v) { return ad::matmul(v[0], v[1]); }});
  c.push_back({"depthwise_conv2d", {{2, 3, 5, 4}, {3, 3, 3}},
               [](auto&, VarList& v) { return ad::depthwise_conv2d(v[0], v[1], {1, 1}); }});
  c.push_back({"depthwise_conv2d_stride2", {{1, 2, 6, 5}, {2, 3, 3}},
               [](auto&, VarList& v) { return ad::depthwise_conv2d(v[0], v[1], {2, 1}); }});
  c.push_back({"conv2d", {{2, 2, 5, 6}, {3, 2, 3, 3}, {3}},
               [](auto&, VarList& v) { return ad::conv2d(v[0], v[1], v[2], {2, 1}); }});
  c.push_back({"add_channel_bias", {{2, 3, 2, 2}, {3}}, [](auto&, VarList& v) { return ad::add_channel_bias(v[0], v[1]); }});
  c.push_back({"layernorm", {{3, 6}, {6}, {6}}, [](auto&, VarList& v) { return ad::layernorm(v[0], v[1], v[2], 1e-5); }});
  c.push_back({"batchnorm2d", {{3, 2, 3, 3}, {2}, {2}},
               [](auto&, VarList& v) { return ad::batchnorm2d(v[0], v[1], v[2], 1e-5); }});
  c.push_back({"batchnorm2d_running_stats", {{2, 2, 2, 3}, {2}, {2}}, [](auto&, VarList& v) {
                 Tensor<double> m(Shape{2}, 0.1), var(Shape{2}, 0.7);
                 return ad::batchnorm2d_fixed(v[0], m, var, v[1], v[2], 1e-5);
               }});
  c.push_back({"reduce_mean", {{2, 3, 4}}, [](auto&, VarList& v) { return ad::reduce(ReduceOp::mean, v[0], 1); }});
  c.push_back({"reduce_sum", {{2, 3, 4}}, [](auto&, VarList& v) { return ad::reduce(ReduceOp::sum, v[0], -1); }});
  c.push_back({"mean_all", {{2, 3}}, [](auto&, VarList& v) { return ad::mean_all(v[0]); }});
  c.push_back({"reshape", {{2, 6}}, [](auto&, VarList& v) { return ad::reshape(v[0], {3, 4}); }});
  c.push_back({"permute", {{2, 3, 4}}, [](auto&, VarList& v) { return ad::permute(v[0], {2, 0, 1}); }});
  c.push_back({"slice", {{2, 5}}, [](auto&, VarList& v) { return ad::slice(v[0], 1, 1, 3); }});
  c.push_back({"concat", {{2, 2}, {2, 3}}, [](auto&, VarList& v) { return ad::concat(v[0], v[1], 1); }});
  c.push_back({"mul_broadcast", {{3, 2, 4}, {2, 4}}, [](auto&, VarList& v) { return ad::mul_broadcast(v[0], v[1]); }});
  c.push_back({"scale_rows", {{3, 4}, {3, 1}}, [](auto&, VarList& v) { return ad::scale_rows(v[0], v[1]); }});
  c.push_back({"softmax", {{2, 5}}, [](auto&, VarList& v) { return ad::softmax(v[0]); }});
  c.push_back({"softmax_cross_entropy", {{3, 4}}, [](auto&, VarList& v) {
                 return ad::softmax_cross_entropy(v[0], std::vector<std::size_t>{0, 3, 1});
               }});
  c.push_back({"binary_cross_entropy", {{2, 3}}, [](auto&, VarList& v) {
                 return ad::binary_cross_entropy_probs(ad::softmax(v[0]), std::vector<std::size_t>{2, 0});
               }});
  c.push_back({"gumbel_softmax_relaxed", {{2, 3}}, [](auto&, VarList& v) {
                 Tensor<double> noise(Shape{2, 3}, std::vector<double>{0.3, -0.2, 1.1, 0.0, 0.5, -0.7});
                 return ad::gumbel_softmax(v[0], noise, 0.8, false);
               }});
  c.push_back({"dct2", {{2, 3, 5}}, [](auto&, VarList& v) { return spectral::dct2(v[0]); }});
  c.push_back({"idct2", {{2, 4, 3}}, [](auto&, VarList& v) { return spectral::idct2(v[0]); }});
  c.push_back({"dct2_channels_last", {{2, 3, 4, 2}}, [](auto&, VarList& v) { return spectral::dct2_channels_last(v[0]); }});
  c.push_back({"idct2_channels_last", {{1, 4, 3, 2}}, [](auto&, VarList& v) { return spectral::idct2_channels_last(v[0]); }});
  c.push_back({"decay_from_diffusivity", {{3, 4, 2}}, [](auto&, VarList& v) {
                 const auto e = spectral::frequency_energy(spectral::make_grid<double>(3, 4));
                 return spectral::decay_from_diffusivity(v[0], e, 0.7, true);
               }, 0.05, 1.0});
  c.push_back({"heat_operator", {{2, 3, 4, 2}, {3, 4, 2}},
               [](auto&, VarList& v) { return spectral::hco_channels_last(v[0], v[1]); }, 0.05, 1.0});
  c.push_back({"mcf", {{2, 3}, {2, 3}}, [](auto&, VarList& v) { return fusion::mcf(v[0], v[1]); }});
  c.push_back({"mdf", {{2, 3}, {2, 3}}, [](auto&, VarList& v) { return fusion::mdf(v[0], v[1]); }});
  return c;
}

/// Contracts y against a fixed random tensor so that every Jacobian entry contributes.
Var<double> project(Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum_all(ad::mul(y, y.tape->constant(uniform(y.shape(), rng))));
}

constexpr double kGradTol = 1e-3;
constexpr double kStep = 1e-6;

}  // namespace

void grad_suite(Report& r, const Options& opts) {
  const char* S = "grad";
  for (const auto& gc : grad_cases()) {
    record(r, S, "op." + gc.name, [&] {
      std::mt19937_64 rng(opts.seed + 11);
      std::vector<ad::Parameter<double>> params;
      params.reserve(gc.shapes.size());
      for (std::size_t i = 0; i < gc.shapes.size(); ++i)
        params.emplace_back("in" + std::to_string(i), uniform(gc.shapes[i], rng, gc.lo, gc.hi));
      ad::LossFn<double> f = [&](ad::Tape<double>& t) {
        VarList vars;
        for (auto& p : params) vars.push_back(t.param(p));
        auto y = gc.build(t, vars);
        return y.value().size() == 1 ? y : project(y, opts.seed + 99);
      };
      double worst = 0;
      for (auto& p : params) worst = std::max(worst, ad::fd_check(f, p, kStep));
      return below(worst, kGradTol, "max relative error");
    });
  }

  // Miniature network, one block per stage. The policy is mixed in through the relaxed
  // Gumbel-Softmax with fixed noise so that every parameter reaches the loss.
  for (auto mode : {head::LossMode::ce, head::LossMode::literal}) {
    record(r, S, std::string("pipeline.") + head::loss_mode_name(mode), [&] {
      train::RunConfig cfg;
      cfg.stage_depths = {1, 1, 1, 1};
      cfg.channels = 8;
      cfg.resolution = 16;
      cfg.frames = 1;
      cfg.precision = train::Precision::f64;
      cfg.seed = opts.seed;
      const std::size_t classes = 3, B = 2;
      train::Network<double> net(cfg, classes);
      std::mt19937_64 rng(opts.seed + 5);
      const Shape in{B, cfg.frames, 3, cfg.resolution, cfg.resolution};
      const auto rgb = uniform(in, rng, 0, 1), evt = uniform(in, rng, 0, 1);
      const auto noise = fusion::gumbel_noise<double>({B, fusion::kNumStrategies}, rng);
      const std::vector<std::size_t> labels{0, 2};
      ad::LossFn<double> f = [&](ad::Tape<double>& t) {
        auto feats = net.backbone().forward(t, rgb, evt, true);
        const auto& fu = net.fusion();
        auto w = ad::gumbel_softmax(fu.policy_logits(t, feats[0], feats[1]), noise, 1.0, false);
        Var<double> fused;
        for (std::size_t s = 0; s < fusion::kNumStrategies; ++s) {
          auto term = ad::scale_rows(fu.strategy(t, static_cast<fusion::Strategy>(s), feats[0], feats[1]),
                                     ad::slice(w, 1, s, 1));
          fused = s == 0 ? term : ad::add(fused, term);
        }
        return head::loss(net.head().forward(t, fused), labels, mode);
      };
      double worst = 0;
      std::string worst_name;
      std::size_t checked = 0;
      for (auto* p : net.store().trainable()) {
        const double e = ad::fd_check(f, *p, kStep, {24, opts.seed + checked});
        ++checked;
        if (e >= worst) {
          worst = e;
          worst_name = p->name;
        }
      }
      auto res = below(worst, kGradTol, "max relative error");
      res.second += " over " + std::to_string(checked) + " parameter tensors, worst " + worst_name;
      return res;
    });
  }
}

// ---------------------------------------------------------------------------
// Fusion

void fusion_suite(Report& r, const Options& opts) {
  const char* S = "fusion";
  record(r, S, "mcf_values", [] {
    auto y = fusion::mcf(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 5, 6}),
                         Tensor<double>(Shape{2, 2}, std::vector<double>{3, 4, 7, 8}));
    const std::vector<double> want{1, 2, 3, 4, 5, 6, 7, 8};
    return std::make_pair(y.vec() == want && y.shape() == Shape{2, 4}, "concat of rows");
  });
  record(r, S, "mdf_values", [] {
    const bool a = fusion::mdf(Tensor<double>(Shape{1, 1}, std::vector<double>{2}), Tensor<double>(Shape{1, 1}, std::vector<double>{3})).vec() == std::vector<double>{-4, -3};
    const bool b = fusion::mdf(Tensor<double>(Shape{1, 2}, std::vector<double>{1, 0.5}), Tensor<double>(Shape{1, 2}, std::vector<double>{2, -1})).vec() ==
                   std::vector<double>{-1, 1, 0, -0.5};
    return std::make_pair(a && b, "mdf([2],[3]) = [-4,-3]; mdf([1,0.5],[2,-1]) = [-1,1,0,-0.5]");
  });
  for (bool per_channel : {false, true}) {
    record(r, S, per_channel ? "msf_values_per_channel" : "msf_values", [&] {
      ad::ParameterStore<double> store;
      std::mt19937_64 rng(opts.seed);
      fusion::Fusion<double> fu(1, store, rng, per_channel);
      std::fill(fu.msf_params().w->value.data().begin(), fu.msf_params().w->value.data().end(), 0.0);
      fu.msf_params().b->value = Tensor<double>(Shape{2}, std::vector<double>{0.0, std::log(3.0)});
      ad::Tape<double> t;
      auto y = fu.msf(t, t.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{2})), t.constant(Tensor<double>(Shape{1, 1}, std::vector<double>{4})));
      const double err = max_abs_diff(y.value(), Tensor<double>(Shape{1, 2}, std::vector<double>{1.0, 3.0}));
      return below(err, 1e-12, "weights (0.5, 0.75) on [2],[4]: error");
    });
  }
  record(r, S, "routed_equals_selected", [&] {
    ad::ParameterStore<double> store;
    std::mt19937_64 rng(opts.seed + 1);
    const std::size_t F = 4, B = 16;
    fusion::Fusion<double> fu(F, store, rng);
    // larger policy weights so the argmax route varies across rows
    for (auto& v : fu.policy_out().w->value.data()) v *= 200;
    std::size_t mismatches = 0;
    for (auto mode : {fusion::Mode::route, fusion::Mode::mcf, fusion::Mode::mdf, fusion::Mode::msf, fusion::Mode::random})
      for (bool training : {false, true}) {
        ad::Tape<double> t;
        auto fr = t.constant(uniform({B, F}, rng)), fe = t.constant(uniform({B, F}, rng));
        auto bundle = fu.route(t, fr, fe, mode, 1.0, training, rng);
        for (std::size_t s = 0; s < fusion::kNumStrategies; ++s) {
          const auto& ref = fu.strategy(t, static_cast<fusion::Strategy>(s), fr, fe).value();
          for (std::size_t b = 0; b < B; ++b) {
            if (bundle.choice[b] != s) continue;
            for (std::size_t j = 0; j < 2 * F; ++j)
              if (bundle.fused.value()[b * 2 * F + j] != ref[b * 2 * F + j]) ++mismatches;
          }
        }
      }
    return std::make_pair(mismatches == 0, std::to_string(mismatches) + " differing values over 10 batches");
  });
  record(r, S, "gumbel_frequencies", [&] {
    const std::vector<double> logits{0.5, -0.3, 1.2};
    const std::size_t N = opts.gumbel_draws, K = logits.size();
    std::mt19937_64 rng(opts.seed + 2);
    Tensor<double> L(Shape{N, K});
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < K; ++k) L[i * K + k] = logits[k];
    ad::Tape<double> t;
    auto y = ad::gumbel_softmax(t.constant(L), fusion::gumbel_noise<double>(L.shape(), rng), 1.0, true);
    std::vector<double> freq(K, 0.0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < K; ++k) freq[k] += y.value()[i * K + k];
    double z = 0;
    for (double l : logits) z += std::exp(l);
    double worst = 0;
    for (std::size_t k = 0; k < K; ++k) worst = std::max(worst, std::abs(freq[k] / N - std::exp(logits[k]) / z));
    return below(worst, 0.01, "max frequency gap over " + std::to_string(N) + " draws");
  });
  record(r, S, "straight_through_gradient", [&] {
    std::mt19937_64 rng(opts.seed + 3);
    const auto logits = uniform({4, 3}, rng), noise = fusion::gumbel_noise<double>({4, 3}, rng);
    auto grad = [&](bool hard) {
      ad::Tape<double> t;
      auto x = t.variable(logits);
      t.backward(project(ad::gumbel_softmax(x, noise, 0.7, hard), 17));
      return *t.grad(x);
    };
    ad::Tape<double> t;
    const auto& hard = ad::gumbel_softmax(t.constant(logits), noise, 0.7, true).value();
    bool onehot = true;
    for (std::size_t b = 0; b < 4; ++b) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double v = hard[b * 3 + k];
        onehot = onehot && (v == 0.0 || v == 1.0);
        s += v;
      }
      onehot = onehot && s == 1.0;
    }
    const double err = max_abs_diff(grad(true), grad(false));
    return std::make_pair(onehot && err < 1e-12, std::string(onehot ? "one-hot forward" : "forward not one-hot") +
                                                     ", backward gap " + fmt_double(err));
  });
  record(r, S, "route_histogram_sums", [&] {
    ad::ParameterStore<double> store;
    std::mt19937_64 rng(opts.seed + 4);
    fusion::Fusion<double> fu(3, store, rng);
    ad::Tape<double> t;
    auto b = fu.route(t, t.constant(uniform({7, 3}, rng)), t.constant(uniform({7, 3}, rng)), fusion::Mode::random, 1.0,
                      false, rng);
    std::array<std::size_t, 3> hist{};
    for (auto c : b.choice) ++hist.at(c);
    const std::size_t total = hist[0] + hist[1] + hist[2];
    return std::make_pair(total == 7, std::to_string(total) + " routed of 7");
  });
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

events::EventStream random_stream(std::mt19937_64& rng, std::size_t max_events) {
  std::uniform_int_distribution<std::size_t> dim(1, 64), count(0, max_events);
  events::EventStream s;
  s.width = dim(rng);
  s.height = dim(rng);
  std::uniform_int_distribution<std::int32_t> X(0, static_cast<std::int32_t>(s.width) - 1),
      Y(0, static_cast<std::int32_t>(s.height) - 1);
  std::uniform_int_distribution<std::int64_t> T(0, 20000);
  std::bernoulli_distribution P(0.5);
  s.events.resize(count(rng));
  for (auto& e : s.events) e = {X(rng), Y(rng), T(rng), static_cast<std::int8_t>(P(rng) ? 1 : -1)};
  std::sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void ingest_suite(Report& r, const Options& opts) {
  const char* S = "ingest";
  // random streams routinely end after the last timestamp; keep those warnings out of the report
  const auto level = spdlog::get_level();
  spdlog::set_level(spdlog::level::err);
  record(r, S, "event_conservation", [&] {
    std::mt19937_64 rng(opts.seed + 21);
    std::uniform_int_distribution<std::size_t> frames(1, 8), side(1, 32);
    std::uniform_int_distribution<std::int64_t> ts(0, 22000);
    std::size_t bad = 0, total = 0;
    for (std::size_t i = 0; i < opts.ingest_streams; ++i) {
      const auto s = random_stream(rng, 400);
      std::vector<std::int64_t> stamps(frames(rng));
      for (auto& t : stamps) t = ts(rng);
      std::sort(stamps.begin(), stamps.end());
      const auto st = events::stack_events(s, stamps, side(rng), side(rng));
      std::uint64_t binned = 0;
      for (auto c : st.counts) binned += c;
      const auto expected = static_cast<std::size_t>(std::count_if(
          s.events.begin(), s.events.end(), [&](const auto& e) { return e.t <= stamps.back(); }));
      total += s.events.size();
      if (binned != st.in_window || st.in_window != expected || st.in_window + st.dropped != s.events.size()) ++bad;
    }
    return std::make_pair(bad == 0, std::to_string(bad) + " of " + std::to_string(opts.ingest_streams) +
                                        " streams lost or gained events (" + std::to_string(total) + " events)");
  });

  fs::path scratch = opts.scratch;
  const bool own = scratch.empty();
  if (own) scratch = fs::temp_directory_path() / ("mmhco_verify_" + std::to_string(opts.seed) + "_" +
                                                  std::to_string(Clock::now().time_since_epoch().count()));
  fs::create_directories(scratch);

  record(r, S, "stream_disk_round_trip", [&] {
    std::mt19937_64 rng(opts.seed + 22);
    std::size_t bad = 0;
    const std::size_t n = std::max<std::size_t>(1, opts.ingest_streams / 10);
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = random_stream(rng, 300);
      const auto a = scratch / "a.csv", b = scratch / "b.csv";
      events::write_events(a, s);
      const auto back = events::parse_events(a, s.width, s.height);
      events::write_events(b, back);
      if (back.events != s.events || slurp(a) != slurp(b)) ++bad;
    }
    return std::make_pair(bad == 0, std::to_string(bad) + " of " + std::to_string(n) + " streams changed on disk");
  });
  record(r, S, "dataset_disk_round_trip", [&] {
    events::SynthConfig cfg;
    cfg.kind = events::SynthKind::noisy;
    cfg.samples_per_class = 2;
    cfg.H = cfg.W = 32;
    const auto root = scratch / "data";
    events::synth_generate(root, cfg, opts.seed);
    std::size_t files = 0, bad = 0;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
      if (entry.path().filename() != "events.csv") continue;
      ++files;
      const auto s = events::parse_events(entry.path(), cfg.W, cfg.H);
      std::ostringstream os;
      events::write_events(os, s);
      std::istringstream is(os.str());
      if (os.str() != slurp(entry.path()) || events::parse_events(is, cfg.W, cfg.H).events != s.events) ++bad;
    }
    std::size_t loaded = 0;
    for (auto split : {events::Split::train, events::Split::val, events::Split::test})
      loaded += events::load_dataset(root, split).samples.size();
    return std::make_pair(bad == 0 && files > 0 && loaded == files,
                          std::to_string(files) + " event files, " + std::to_string(bad) + " differ, " +
                              std::to_string(loaded) + " samples loaded");
  });
  record(r, S, "malformed_rejected", [] {
    const std::vector<std::pair<std::string, std::size_t>> bad{
        {"t,x,y,p\n1,0,0,1\n2,0,0\n", 3}, {"1,0,0,2\n", 1}, {"1,0,0,1\n2,9,0,1\n", 2}, {"1,0,0,1\nabc\n", 2}};
    std::size_t caught = 0;
    for (const auto& [text, line] : bad) {
      std::istringstream in(text);
      try {
        events::parse_events(in, 4, 4);
      } catch (const events::ParseError& e) {
        if (e.line() == line) ++caught;
      }
    }
    return std::make_pair(caught == bad.size(),
                          std::to_string(caught) + " of " + std::to_string(bad.size()) + " rejected at the right line");
  });
  if (own) {
    std::error_code ec;
    fs::remove_all(scratch, ec);
  }
  spdlog::set_level(level);
}

Report run(Suite suite, const Options& opts) {
  Report r;
  if (suite == Suite::spectral || suite == Suite::all) spectral_suite(r, opts);
  if (suite == Suite::grad || suite == Suite::all) grad_suite(r, opts);
  if (suite == Suite::fusion || suite == Suite::all) fusion_suite(r, opts);
  if (suite == Suite::ingest || suite == Suite::all) ingest_suite(r, opts);
  return r;
}

}  // namespace mmhco::verify
