#include "mmhco/profiler.hpp"

#include "mmhco/spectral.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace mmhco::profiler {

std::uint64_t dct_flops(std::uint64_t C, std::uint64_t H, std::uint64_t W) { return 2 * C * H * W * (H + W); }

std::uint64_t hco_flops(std::uint64_t C, std::uint64_t H, std::uint64_t W) {
  return 2 * dct_flops(C, H, W) + C * H * W;
}

std::uint64_t linear_params(std::uint64_t in, std::uint64_t out) { return in * out + out; }

CostReport count_costs(const model::BackboneConfig& cfg, std::size_t frames, std::size_t classes,
                       bool msf_per_channel) {
  cfg.validate();
  CostReport r;
  r.frames = frames;
  const auto ch = cfg.stage_channels();
  const auto sz = cfg.stage_sizes();
  const std::uint64_t D = cfg.embed_dim(), streams = 2, per_clip = frames * streams;
  auto add = [&](std::string name, std::uint64_t flops, std::uint64_t params, std::uint64_t tokens,
                 std::uint64_t count) { r.layers.push_back({std::move(name), flops, params, tokens, count}); };
  auto conv = [](std::uint64_t cin, std::uint64_t cout, std::uint64_t ho, std::uint64_t wo) {
    return cout * cin * 9 * ho * wo;
  };

  // params are trainable totals over both streams; batch norm running stats are not counted
  const std::uint64_t C1 = cfg.base_channels, half = C1 / 2, in = cfg.in_channels;
  const std::uint64_t s1 = cfg.resolution / 2, s0 = sz[0];
  add("stem.conv1", conv(in, half, s1, s1), streams * (9 * in * half + half + 2 * half), s1 * s1, per_clip);
  add("stem.conv2", conv(half, C1, s0, s0), streams * (9 * half * C1 + C1 + 2 * C1), s0 * s0, per_clip);
  add("fve.table", 0, streams * s0 * s0 * D, s0 * s0, streams);

  for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
    const std::uint64_t C = ch[s], H = sz[s], P = H * H;
    const std::string st = "stage" + std::to_string(s);
    if (s > 0) {
      add("fve.proj" + std::to_string(s - 1), D * 9 * P, streams * D * 9, P, streams);
      add("down" + std::to_string(s - 1), conv(ch[s - 1], C, H, H), streams * (9 * ch[s - 1] * C + C + 2 * C), P,
          per_clip);
    }
    const std::uint64_t n = cfg.stage_depths[s];
    add(st + ".dwconv", C * 9 * P, (9 * C + C) * n, P, per_clip * n);
    add(st + ".in_proj", P * C * 2 * C, linear_params(C, 2 * C) * streams * n, P, per_clip * n);
    add(st + ".to_k", P * D * C, linear_params(D, C) * streams * n, P, streams * n);
    add(st + ".hco", hco_flops(C, H, H), 0, P, per_clip * n);
    add(st + ".ln", 0, 2 * C * streams * n, P, per_clip * n);
    add(st + ".gate", P * C * C, linear_params(C, C) * streams * n, P, per_clip * n);
    add(st + ".out", P * C * C, linear_params(C, C) * streams * n, P, per_clip * n);
  }
  const std::uint64_t F = cfg.feature_dim(), F2 = 2 * F;
  add("fusion.msf", F2 * (msf_per_channel ? F2 : 2), linear_params(F2, msf_per_channel ? F2 : 2), 1, 1);
  add("fusion.policy", F2 * F2 + F2 * 3, linear_params(F2, F2) + linear_params(F2, 3), 1, 1);
  add("head", F2 * classes, 2 * F2 + linear_params(F2, classes), 1, 1);

  for (const auto& l : r.layers) {
    r.total_flops += l.flops * l.count;
    r.total_params += l.params;
    if (l.name.rfind("fusion", 0) != 0 && l.name != "head") r.backbone_params += l.params;
  }
  return r;
}

std::string format_report(const CostReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "layer" << std::right << std::setw(10) << "tokens" << std::setw(8) << "count"
     << std::setw(16) << "flops/run" << std::setw(14) << "params" << '\n';
  for (const auto& l : r.layers)
    os << std::left << std::setw(20) << l.name << std::right << std::setw(10) << l.tokens << std::setw(8) << l.count
       << std::setw(16) << l.flops << std::setw(14) << l.params << '\n';
  os << std::fixed << std::setprecision(3) << "total per clip (" << r.frames << " frames, 2 streams): "
     << static_cast<double>(r.total_flops) / 1e9 << " G flops, " << static_cast<double>(r.total_params) / 1e6
     << " M params (backbone " << static_cast<double>(r.backbone_params) / 1e6 << " M)\n";
  return os.str();
}

void write_report_kv(const std::filesystem::path& path, const CostReport& r) {
  std::ofstream out(path);
  out << "frames=" << r.frames << "\ntotal_flops=" << r.total_flops << "\ntotal_params=" << r.total_params
      << "\nbackbone_params=" << r.backbone_params << "\nwall_ms=" << r.wall_ms << '\n';
  for (const auto& l : r.layers)
    out << "layer." << l.name << ".flops=" << l.flops << "\nlayer." << l.name << ".count=" << l.count << "\nlayer."
        << l.name << ".params=" << l.params << '\n';
}

// ---------------------------------------------------------------------------

void naive_attention(const float* x, std::size_t N, std::size_t C, float* out) {
  using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> X(x, static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(C));
  Eigen::Map<Mat> Y(out, static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(C));
  const float scale = 1.0f / std::sqrt(static_cast<float>(C));
  Eigen::VectorXf s(static_cast<Eigen::Index>(N));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(N); ++i) {
    s.noalias() = X * X.row(i).transpose();
    s *= scale;
    const float m = s.maxCoeff();
    s = (s.array() - m).exp();
    s /= s.sum();
    Y.row(i).noalias() = s.transpose() * X;
  }
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace {

template <class F>
std::pair<double, double> median_ms(F&& f, std::size_t warmup, std::size_t repeats) {
  for (std::size_t i = 0; i < warmup; ++i) f();
  std::vector<double> ms;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const double med = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
  return {med, med > 0 ? (ms.back() - ms.front()) / med : 0.0};
}

}  // namespace

ScalingResult scaling_bench(const ScalingOptions& opts) {
  if (opts.sides.size() < 3) throw std::invalid_argument("scaling_bench: need at least 3 resolutions");
  if (opts.repeats < 10) throw std::invalid_argument("scaling_bench: need at least 10 timed runs");
  ScalingResult res;
  res.channels = opts.channels;
  res.repeats = opts.repeats;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<float> U(-1.0f, 1.0f);
  std::vector<double> tokens, hco_t, att_t;
  for (std::size_t side : opts.sides) {
    const std::size_t C = opts.channels, N = side * side;
    Tensor<float> x(Shape{1, side, side, C});
    for (auto& v : x.data()) v = U(rng);
    Tensor<float> decay(Shape{side, side, C});
    const auto energy = spectral::frequency_energy(spectral::make_grid<float>(side, side));
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t c = 0; c < C; ++c) decay[p * C + c] = std::exp(-0.5f * energy[p]);
    volatile float sink = 0;
    auto hco = [&]() {
      Tensor<float> f = spectral::dct2_channels_last(x);
      for (std::size_t i = 0; i < f.size(); ++i) f[i] *= decay[i];
      Tensor<float> u = spectral::idct2_channels_last(f);
      sink = sink + u[0];
    };
    ScalingRow row;
    row.side = side;
    row.tokens = N;
    std::tie(row.hco_ms, row.hco_spread) = median_ms(hco, opts.warmup, opts.repeats);
    if (opts.attention) {
      std::vector<float> out(N * C);
      auto att = [&]() {
        naive_attention(x.ptr(), N, C, out.data());
        sink = sink + out[0];
      };
      std::tie(row.attention_ms, row.attention_spread) = median_ms(att, opts.warmup, opts.repeats);
      att_t.push_back(row.attention_ms);
    }
    tokens.push_back(static_cast<double>(N));
    hco_t.push_back(row.hco_ms);
    res.rerun_advised = res.rerun_advised || row.hco_spread > 0.2 || row.attention_spread > 0.2;
    res.rows.push_back(row);
  }
  res.hco_slope = loglog_slope(tokens, hco_t);
  if (opts.attention) res.attention_slope = loglog_slope(tokens, att_t);
  return res;
}

std::string format_scaling(const ScalingResult& r) {
  std::ostringstream os;
  os << std::setw(8) << "side" << std::setw(10) << "tokens" << std::setw(14) << "hco_ms" << std::setw(16)
     << "attention_ms" << '\n';
  os << std::fixed;
  for (const auto& row : r.rows)
    os << std::setw(8) << row.side << std::setw(10) << row.tokens << std::setw(14) << std::setprecision(4)
       << row.hco_ms << std::setw(16) << row.attention_ms << '\n';
  os << std::setprecision(3) << "log-log slope: hco " << r.hco_slope << ", attention " << r.attention_slope << " ("
     << r.channels << " channels, median of " << r.repeats << " runs)\n";
  if (r.rerun_advised) os << "advisory: timing spread above 20% of the median, consider rerunning\n";
  return os.str();
}

void write_scaling_kv(const std::filesystem::path& path, const ScalingResult& r) {
  std::ofstream out(path);
  out << std::setprecision(10) << "channels=" << r.channels << "\nrepeats=" << r.repeats << "\nhco_slope=" << r.hco_slope
      << "\nattention_slope=" << r.attention_slope << "\nrerun_advised=" << (r.rerun_advised ? "true" : "false") << '\n';
  for (const auto& row : r.rows)
    out << "side." << row.side << ".tokens=" << row.tokens << "\nside." << row.side << ".hco_ms=" << row.hco_ms
        << "\nside." << row.side << ".attention_ms=" << row.attention_ms << '\n';
}

}  // namespace mmhco::profiler
