#pragma once

#include "ckad/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace ckad {

struct BenchRow {
  Eigen::Index n = 0;
  double seconds = 0.0;    // median over repeats
  std::size_t bytes = 0;   // process peak resident set after the run, 0 if unavailable
  std::string variant;     // "linear", "kaa" or "quadratic"
};

struct BenchConfig {
  std::vector<Eigen::Index> sizes{1024, 2048, 4096, 8192};
  std::vector<Eigen::Index> oracle_sizes{512, 1024, 2048};
  int repeats = 5;
  ModelHyper hyper;
  bool include_kaa = true;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double linear_r2 = 0.0;
};

/// Peak resident set size (VmHWM) in bytes, 0 where /proc is unavailable.
std::size_t peak_resident_bytes();

/// Coefficient of determination of the least-squares line through (x, y).
double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y);

BenchResult run_bench(const BenchConfig& cfg);
void write_bench_csv(const BenchResult& result, std::ostream& os);
/// Median-time ratio t(2n) / t(n) for consecutive doublings of one variant.
std::vector<double> doubling_ratios(const BenchResult& result, const std::string& variant);

}  // namespace ckad
