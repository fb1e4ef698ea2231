// gradkernel: benchmarks and optimization experiments from the command line.
//
//   gradkernel bench-mvm --kernel rq --n 8 --d 5 --oracle
//   gradkernel bench-hessian --kernel rbf --d 8,16,32
//   gradkernel bo --function griewank --d 4 --strategy fobo-q --budget 20 --seeds 8
//
// Exit status: 0 success, 2 usage error, 1 numerical failure.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "gradkernel/bench.hpp"
#include "gradkernel/errors.hpp"
#include "gradkernel/test_functions.hpp"

using namespace gradkernel;

namespace {

struct UsageError : Error {
  using Error::Error;
};

// Writes to the file if a path was given, else stdout.
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open '" + path + "' for writing");
  f << text;
}

std::vector<LazyBlockMatrix::Options::Mode> parse_modes(const std::string& m) {
  using Mode = LazyBlockMatrix::Options::Mode;
  if (m == "structured") return {Mode::Structured};
  if (m == "dense" || m == "dense-fallback") return {Mode::DenseFallback};
  if (m == "both") return {Mode::Structured, Mode::DenseFallback};
  throw UsageError("unknown mode '" + m + "' (structured, dense, both)");
}

nlohmann::json bench_summary(const std::vector<BenchRecord>& recs) {
  nlohmann::json j;
  j["records"] = recs.size();
  // Multiply-count slope against d for each (mode, n) with two or more sizes.
  std::map<std::pair<std::string, Index>, std::pair<std::vector<double>, std::vector<double>>> series;
  for (const auto& r : recs) {
    auto& s = series[{r.mode, r.n}];
    s.first.push_back(static_cast<double>(r.d));
    s.second.push_back(static_cast<double>(r.mults));
  }
  nlohmann::json slopes = nlohmann::json::array();
  for (const auto& [key, s] : series)
    if (s.first.size() >= 2)
      slopes.push_back({{"mode", key.first}, {"n", key.second}, {"mults_vs_d_slope", loglog_slope(s.first, s.second)}});
  j["slopes"] = slopes;
  double worst = 0.0;
  bool any = false;
  for (const auto& r : recs)
    if (r.max_rel_err) {
      worst = std::max(worst, *r.max_rel_err);
      any = true;
    }
  if (any) j["max_rel_err"] = worst;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured gradient-kernel benchmarks and Bayesian optimization experiments"};
  app.require_subcommand(1);

  MvmBenchConfig mvm;
  std::string mvm_mode = "structured", mvm_out, mvm_json;
  bool count_ops = false, no_timing = false;
  auto add_mvm_flags = [&](CLI::App* sub, bool hessian) {
    sub->add_option("--kernel", mvm.kernel, "kernel expression, e.g. sum(matern52, pow(dot(c=1), 2))");
    sub->add_option("--n", mvm.n, "comma-separated point counts")->delimiter(',');
    sub->add_option("--d", mvm.d, "comma-separated dimensions")->delimiter(',');
    sub->add_option("--mode", mvm_mode, "structured, dense or both");
    sub->add_option("--seed", mvm.seed, "random seed");
    sub->add_flag("--oracle", mvm.oracle, "compare against the dense materialized operator");
    sub->add_option("--oracle-cap", mvm.oracle_cap, "largest operator size compared against the oracle");
    sub->add_flag("--count-ops", count_ops, "multiply counts are always recorded; accepted for clarity");
    sub->add_flag("--no-timing", no_timing, "write 0 in the seconds column");
    sub->add_option("--out", mvm_out, "CSV output path (default stdout)");
    sub->add_option("--json", mvm_json, "write a JSON summary here");
    (void)hessian;
  };
  CLI::App* sub_mvm = app.add_subcommand("bench-mvm", "value+gradient kernel matrix multiplies");
  add_mvm_flags(sub_mvm, false);
  CLI::App* sub_hess = app.add_subcommand("bench-hessian", "value+gradient+Hessian kernel matrix multiplies");
  add_mvm_flags(sub_hess, true);

  GapBenchConfig gap;
  std::string strategy = "fobo-q", bo_out, bo_summary, bo_json, bo_kernel;
  CLI::App* sub_bo = app.add_subcommand("bo", "optimality-gap traces on a normalized test function");
  sub_bo->add_option("--function", gap.function, "ackley, rastrigin, griewank, rosenbrock or dropwave");
  sub_bo->add_option("--d", gap.d, "dimension");
  sub_bo->add_option("--strategy", strategy, "random, lbfgs, lbfgs-r, bo, bo-q, fobo or fobo-q");
  sub_bo->add_option("--budget", gap.budget, "objective evaluations per run");
  sub_bo->add_option("--seeds", gap.seeds, "number of independent runs");
  sub_bo->add_option("--seed", gap.first_seed, "seed of the first run");
  sub_bo->add_option("--epsilon", gap.epsilon, "restart distance");
  sub_bo->add_option("--noise-value", gap.noise_value, "value observation noise variance");
  sub_bo->add_option("--noise-grad", gap.noise_grad, "gradient observation noise variance");
  sub_bo->add_option("--kernel", bo_kernel, "surrogate kernel expression overriding the strategy default");
  sub_bo->add_option("--out", bo_out, "trace CSV path (default stdout)");
  sub_bo->add_option("--summary", bo_summary, "per-iteration mean-gap CSV path");
  sub_bo->add_option("--json", bo_json, "write a JSON summary here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  mvm.threads = env_threads();
  gap.workers = env_threads();
  mvm.timing = !no_timing;

  try {
    if (sub_mvm->parsed() || sub_hess->parsed()) {
      mvm.modes = parse_modes(mvm_mode);
      const auto recs = sub_mvm->parsed() ? bench_mvm(mvm) : bench_hessian(mvm);
      std::ostringstream os;
      write_bench_csv(os, recs);
      emit(mvm_out, os.str());
      if (!mvm_json.empty()) emit(mvm_json, bench_summary(recs).dump(2) + "\n");
    } else if (sub_bo->parsed()) {
      gap.strategy = parse_strategy(strategy);
      if (!bo_kernel.empty()) gap.kernel = bo_kernel;
      const GapBenchResult res = bench_gap(gap);
      std::ostringstream os;
      write_gap_csv(os, res);
      emit(bo_out, os.str());
      if (!bo_summary.empty()) {
        std::ostringstream s;
        s << "iter,mean_gap\n";
        s.precision(17);
        for (std::size_t i = 0; i < res.mean_gap.size(); ++i) s << i + 1 << ',' << res.mean_gap[i] << '\n';
        emit(bo_summary, s.str());
      }
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
      std::cerr << "normalization: " << res.normalization << '\n';
      std::cerr << "mean final gap over " << gap.seeds << " seeds: " << res.mean_gap.back() << '\n';
      if (!bo_json.empty()) {
        nlohmann::json j{{"function", gap.function},
                         {"d", gap.d},
                         {"strategy", strategy},
                         {"budget", gap.budget},
                         {"seeds", gap.seeds},
                         {"epsilon", gap.epsilon},
                         {"final_mean_gap", res.mean_gap.back()},
                         {"mean_gap", res.mean_gap},
                         {"normalization", res.normalization},
                         {"warnings", res.warnings.size()}};
        emit(bo_json, j.dump(2) + "\n");
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: kernel expression: " << e.what() << '\n';
    return 2;
  } catch (const UnknownName& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DimensionMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const UnsupportedNode& e) {
    std::cerr << "error: unsupported kernel: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
