#pragma once

#include "mmhco/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mmhco::verify {

enum class Suite { grad, spectral, fusion, ingest, all };
Suite parse_suite(const std::string& s);
const char* suite_name(Suite s);

struct Check {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct Report {
  std::vector<Check> checks;
  bool passed() const;
  std::size_t failures() const;
  /// One "PASS/FAIL suite/name: detail" line per check plus a summary line.
  std::string format() const;
};

/// The transform pair the spectral suite checks. Swapping in a broken pair is how
/// the suite itself is tested.
struct SpectralOps {
  std::function<Tensor<double>(const Tensor<double>&)> dct2;
  std::function<Tensor<double>(const Tensor<double>&)> idct2;
  static SpectralOps library();
};

struct Options {
  std::uint64_t seed = 0;
  SpectralOps spectral = SpectralOps::library();
  std::size_t random_shapes = 100;
  std::size_t heat_draws = 50;
  std::size_t gumbel_draws = 100000;
  std::size_t ingest_streams = 1000;
  /// Directory for the disk round trip; a fresh temporary directory when empty.
  std::filesystem::path scratch;
};

Report run(Suite suite, const Options& opts = {});

// Individual suites append to `report`.
void spectral_suite(Report& report, const Options& opts);
void grad_suite(Report& report, const Options& opts);
void fusion_suite(Report& report, const Options& opts);
void ingest_suite(Report& report, const Options& opts);

/// Orthonormal DCT-II of a single [H, W] plane by the direct double sum.
Tensor<double> dct2_direct(const Tensor<double>& x);

}  // namespace mmhco::verify
