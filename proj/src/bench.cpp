#include "gradkernel/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <random>
#include <thread>

#include "gradkernel/kernel_parser.hpp"
#include "gradkernel/simd.hpp"
#include "gradkernel/test_functions.hpp"

namespace gradkernel {

namespace {

using Mode = LazyBlockMatrix::Options::Mode;

std::string num(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

const char* mode_name(Mode m) { return m == Mode::Structured ? "structured" : "dense-fallback"; }

MatrixXd gaussian_points(std::mt19937_64& rng, Index d, Index n) {
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd X(d, n);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (Index i = 0; i < X.size(); ++i) X.data()[i] = s * z(rng);
  return X;
}

std::vector<BenchRecord> run_mvm(const MvmBenchConfig& cfg, bool hessians) {
  const KernelExpr k = parse_kernel(cfg.kernel);
  std::vector<BenchRecord> out;
  for (Mode mode : cfg.modes) {
    for (Index n : cfg.n) {
      for (Index d : cfg.d) {
        if (n < 1 || d < 1) throw DomainError("benchmark sizes must be positive");
        std::mt19937_64 rng(cfg.seed ^ (static_cast<std::uint64_t>(n) << 32) ^ static_cast<std::uint64_t>(d));
        const MatrixXd X = gaussian_points(rng, d, n);
        LazyBlockMatrix::Options o;
        o.mode = mode;
        o.hessians = hessians;
        o.threads = cfg.threads;
        const LazyBlockMatrix M(k, X, o);
        std::normal_distribution<double> z(0.0, 1.0);
        VectorXd v(M.total_dim()), r(M.total_dim());
        for (Index i = 0; i < v.size(); ++i) v(i) = z(rng);

        simd::reset_multiplies();
        const auto t0 = std::chrono::steady_clock::now();
        M.mvm(v.data(), r.data());
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        BenchRecord rec;
        rec.experiment = hessians ? "hessian-mvm" : "mvm";
        rec.kernel = cfg.kernel;
        rec.n = n;
        rec.d = d;
        rec.mode = mode_name(mode);
        rec.seconds = cfg.timing ? sec : 0.0;
        rec.mults = simd::multiplies();
        rec.seed = cfg.seed;
        if (cfg.oracle && M.total_dim() <= cfg.oracle_cap) {
          LazyBlockMatrix::Options od = o;
          od.mode = Mode::DenseFallback;
          const VectorXd ref = LazyBlockMatrix(k, X, od).materialize() * v;
          const double scale = ref.cwiseAbs().maxCoeff();
          rec.max_rel_err = (r - ref).cwiseAbs().maxCoeff() / (scale > 0 ? scale : 1.0);
        }
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

}  // namespace

void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records) {
  os << kBenchHeader << '\n';
  for (const auto& r : records) {
    std::string kernel = r.kernel;
    if (kernel.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : kernel) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      kernel = q + "\"";
    }
    os << r.experiment << ',' << kernel << ',' << r.n << ',' << r.d << ',' << r.mode << ',' << num(r.seconds, "%.6e")
       << ',' << r.mults << ',' << (r.max_rel_err ? num(*r.max_rel_err, "%.3e") : std::string()) << ',' << r.seed
       << '\n';
  }
}

std::vector<BenchRecord> bench_mvm(const MvmBenchConfig& config) { return run_mvm(config, false); }
std::vector<BenchRecord> bench_hessian(const MvmBenchConfig& config) { return run_mvm(config, true); }

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require_dim(x.size() == y.size() && x.size() >= 2, "slope needs two or more points");
  const auto m = static_cast<Index>(x.size());
  Eigen::MatrixX2d A(m, 2);
  VectorXd b(m);
  for (Index i = 0; i < m; ++i) {
    A(i, 0) = std::log(x[static_cast<std::size_t>(i)]);
    A(i, 1) = 1.0;
    b(i) = std::log(y[static_cast<std::size_t>(i)]);
  }
  return A.colPivHouseholderQr().solve(b)(0);
}

GapBenchResult bench_gap(const GapBenchConfig& cfg) {
  if (cfg.seeds < 1) throw DomainError("at least one seed is required");
  const TestFunction tf = make_normalized(cfg.function, cfg.d);
  std::optional<KernelExpr> kernel;
  if (cfg.kernel) kernel = parse_kernel(*cfg.kernel);

  std::vector<BOTrace> traces(static_cast<std::size_t>(cfg.seeds));
  auto run_one = [&](int s) {
    BOConfig c;
    c.strategy = cfg.strategy;
    c.budget = cfg.budget;
    c.epsilon = cfg.epsilon;
    c.box = tf.domain;
    c.seed = cfg.first_seed + static_cast<std::uint64_t>(s);
    c.noise_value = cfg.noise_value;
    c.noise_grad = cfg.noise_grad;
    c.kernel = kernel;
    traces[static_cast<std::size_t>(s)] = bo_run(tf.objective(), c);
  };
  const int W = std::max(1, std::min(cfg.workers, cfg.seeds));
  if (W == 1) {
    for (int s = 0; s < cfg.seeds; ++s) run_one(s);
  } else {
    std::vector<std::thread> pool;
    std::mutex m;
    std::exception_ptr err;
    int next = 0;
    for (int w = 0; w < W; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          int s;
          {
            std::lock_guard lock(m);
            if (next >= cfg.seeds || err) return;
            s = next++;
          }
          try {
            run_one(s);
          } catch (...) {
            std::lock_guard lock(m);
            err = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
  }

  GapBenchResult res;
  res.normalization = tf.max_source;
  res.mean_gap.assign(static_cast<std::size_t>(cfg.budget), 0.0);
  for (int s = 0; s < cfg.seeds; ++s) {
    const BOTrace& tr = traces[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < tr.records.size(); ++i) {
      const BORecord& r = tr.records[i];
      res.rows.push_back({cfg.first_seed + static_cast<std::uint64_t>(s), static_cast<int>(i) + 1, r.best - tf.min_value,
                          r.restart});
      res.mean_gap[i] += (r.best - tf.min_value) / cfg.seeds;
    }
    for (const auto& w : tr.warnings) res.warnings.push_back("seed " + std::to_string(cfg.first_seed + s) + ": " + w);
  }
  return res;
}

void write_gap_csv(std::ostream& os, const GapBenchResult& result) {
  os << kBOHeader << '\n';
  for (const auto& r : result.rows) os << r.seed << ',' << r.iter << ',' << num(r.gap) << ',' << (r.restart ? 1 : 0) << '\n';
}

}  // namespace gradkernel
