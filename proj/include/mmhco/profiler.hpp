#pragma once

#include "mmhco/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmhco::profiler {

/// Analytic cost of one layer. `flops` counts multiply-adds for linear and convolution
/// layers; the heat-conduction transforms use 2*C*H*W*(H+W) per direction plus C*H*W
/// for the decay.
struct LayerCost {
  std::string name;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  std::uint64_t tokens = 0;  // H*W at the layer
  std::uint64_t count = 1;   // executions per clip
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::uint64_t total_flops = 0;   // per clip: frames x both modalities
  std::uint64_t total_params = 0;  // backbone, fusion and head
  std::uint64_t backbone_params = 0;
  std::size_t frames = 1;
  double wall_ms = 0;  // filled in when a measurement was taken
};

/// Multiply-adds of one orthonormal 2-D transform direction on C x H x W.
std::uint64_t dct_flops(std::uint64_t C, std::uint64_t H, std::uint64_t W);
/// Both transform directions plus the decay product.
std::uint64_t hco_flops(std::uint64_t C, std::uint64_t H, std::uint64_t W);
std::uint64_t linear_params(std::uint64_t in, std::uint64_t out);

CostReport count_costs(const model::BackboneConfig& cfg, std::size_t frames, std::size_t classes,
                       bool msf_per_channel = false);

std::string format_report(const CostReport& r);
void write_report_kv(const std::filesystem::path& path, const CostReport& r);

// ---------------------------------------------------------------------------
// Wall-clock scaling

struct ScalingRow {
  std::size_t side = 0;
  std::uint64_t tokens = 0;
  double hco_ms = 0;
  double attention_ms = 0;  // 0 when the baseline was skipped
  double hco_spread = 0;    // (max - min) / median over the timed runs
  double attention_spread = 0;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  double hco_slope = 0;
  double attention_slope = 0;
  std::size_t channels = 0;
  std::size_t repeats = 0;
  /// True when any spread exceeds 20% of its median.
  bool rerun_advised = false;
};

struct ScalingOptions {
  std::vector<std::size_t> sides{32, 64, 128};
  std::size_t channels = 16;
  std::size_t repeats = 10;
  std::size_t warmup = 2;
  bool attention = true;
  std::uint64_t seed = 0;
};

/// Times one heat-conduction layer (forward, channels-last, f32) and a naive dense
/// attention layer over N = side^2 tokens, then fits log(ms) against log(N).
ScalingResult scaling_bench(const ScalingOptions& opts);

/// Single-head softmax attention with Q = K = V = x[N, C]. Rows are processed one at a
/// time so memory stays O(N C); time is O(N^2 C).
void naive_attention(const float* x, std::size_t N, std::size_t C, float* out);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

std::string format_scaling(const ScalingResult& r);
void write_scaling_kv(const std::filesystem::path& path, const ScalingResult& r);

}  // namespace mmhco::profiler
