#pragma once

// Benchmark drivers behind the command-line tool: MVM and Hessian-MVM
// operation counts and timings, and optimality-gap traces.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gradkernel/bayes_opt.hpp"
#include "gradkernel/lazy.hpp"

namespace gradkernel {

struct BenchRecord {
  std::string experiment;
  std::string kernel;
  Index n = 0;
  Index d = 0;
  std::string mode;  // structured or dense-fallback
  double seconds = 0.0;
  std::uint64_t mults = 0;
  std::optional<double> max_rel_err;
  std::uint64_t seed = 0;
};

inline constexpr const char* kBenchHeader = "experiment,kernel,n,d,mode,seconds,mults,max_rel_err,seed";
inline constexpr const char* kBOHeader = "seed,iter,x_best_gap,restart";

void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records);

struct MvmBenchConfig {
  std::string kernel = "rbf";
  std::vector<Index> n{1};
  std::vector<Index> d{16};
  std::vector<LazyBlockMatrix::Options::Mode> modes{LazyBlockMatrix::Options::Mode::Structured};
  std::uint64_t seed = 0;
  bool oracle = false;
  /// Oracle comparisons are skipped above this many rows.
  Index oracle_cap = 4096;
  /// Records 0 seconds so output is reproducible.
  bool timing = true;
  int threads = 1;
};

/// One record per (mode, n, d) for the value+gradient operator.
std::vector<BenchRecord> bench_mvm(const MvmBenchConfig& config);
/// Same for the value+gradient+Hessian operator.
std::vector<BenchRecord> bench_hessian(const MvmBenchConfig& config);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct GapBenchConfig {
  std::string function = "griewank";
  Index d = 4;
  Strategy strategy = Strategy::FOBO_Q;
  int budget = 60;
  int seeds = 8;
  std::uint64_t first_seed = 0;
  double epsilon = 1e-4;
  double noise_value = 1e-8;
  double noise_grad = 1e-8;
  std::optional<std::string> kernel;
  /// Seeds processed concurrently; results are ordered by seed regardless.
  int workers = 1;
};

struct GapRow {
  std::uint64_t seed = 0;
  int iter = 0;
  double gap = 0.0;
  bool restart = false;
};

struct GapBenchResult {
  std::vector<GapRow> rows;  // sorted by (seed, iter)
  std::vector<double> mean_gap;  // per iteration, over seeds
  std::vector<std::string> warnings;
  std::string normalization;
};

/// Runs the strategy on the normalized test function for every seed; the gap
/// is best-so-far minus the known minimum 0.
GapBenchResult bench_gap(const GapBenchConfig& config);
void write_gap_csv(std::ostream& os, const GapBenchResult& result);

}  // namespace gradkernel
