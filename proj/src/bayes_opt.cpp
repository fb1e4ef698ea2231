#include "gradkernel/bayes_opt.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "gradkernel/kernel.hpp"

namespace gradkernel {

// ---------------------------------------------------------------------------
// Box

Box Box::cube(Index d, double lo, double hi) { return Box{VectorXd::Constant(d, lo), VectorXd::Constant(d, hi)}; }

void Box::validate() const {
  require_dim(lower.size() == upper.size() && lower.size() > 0, "box bounds");
  if (!(lower.array() < upper.array()).all()) throw DomainError("box must have lower < upper in every coordinate");
}

VectorXd Box::clip(const VectorXd& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

VectorXd Box::uniform(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd x(d());
  for (Index i = 0; i < d(); ++i) x(i) = lower(i) + u(rng) * (upper(i) - lower(i));
  return x;
}

double Box::max_width() const { return (upper - lower).maxCoeff(); }

// ---------------------------------------------------------------------------
// Expected improvement

namespace {

double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

EIResult expected_improvement(const Prediction& p, double f_best) {
  EIResult r;
  const double sigma = std::sqrt(p.var);
  const double imp = f_best - p.mean;
  if (sigma < 1e-12) {
    r.degenerate_variance = true;
    r.ei = std::max(imp, 0.0);
    r.grad = imp > 0 ? VectorXd(-p.mean_grad) : VectorXd::Zero(p.mean_grad.size());
    return r;
  }
  const double z = imp / sigma;
  const double cdf = norm_cdf(z), pdf = norm_pdf(z);
  r.ei = std::max(imp * cdf + sigma * pdf, 0.0);
  // ∂EI/∂μ = −Φ(z), ∂EI/∂σ = φ(z), ∇σ = ∇var / 2σ.
  r.grad = -cdf * p.mean_grad + pdf * p.var_grad / (2.0 * sigma);
  return r;
}

EIResult expected_improvement(const Posterior& post, const VectorXd& x, double f_best) {
  return expected_improvement(post.predict(x), f_best);
}

namespace {

// −log EI with its gradient. EI = σ h(z), h(z) = zΦ(z) + φ(z), h′ = Φ.
// Far in the lower tail h and Φ come from their asymptotic series, which keeps
// the surface informative where EI itself underflows.
double neg_log_ei(const Prediction& p, double f_best, VectorXd* grad) {
  const double sigma = std::sqrt(p.var);
  const double imp = f_best - p.mean;
  const Index d = p.mean_grad.size();
  if (sigma < 1e-12) {
    if (imp > 0) {
      if (grad) *grad = p.mean_grad / imp;
      return -std::log(imp);
    }
    if (grad) *grad = VectorXd::Zero(d);
    return 1e3;
  }
  const double z = imp / sigma;
  double log_h, ratio;  // ratio = Φ(z) / h(z)
  if (z > -6.0) {
    const double h = z * norm_cdf(z) + norm_pdf(z);
    log_h = std::log(h);
    ratio = norm_cdf(z) / h;
  } else {
    const double u = 1.0 / (z * z);
    const double hs = 1.0 - 3.0 * u + 15.0 * u * u - 105.0 * u * u * u;
    const double cs = 1.0 - u + 3.0 * u * u - 15.0 * u * u * u;
    log_h = -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(u) + std::log(hs);
    ratio = -z * cs / hs;
  }
  if (grad) {
    const VectorXd ds = p.var_grad / (2.0 * sigma);
    const VectorXd dz = (-p.mean_grad - z * ds) / sigma;
    *grad = -(ds / sigma + ratio * dz);
  }
  return -(std::log(sigma) + log_h);
}

}  // namespace

// ---------------------------------------------------------------------------
// L-BFGS

std::string to_string(LBFGSStatus s) {
  switch (s) {
    case LBFGSStatus::Converged: return "converged";
    case LBFGSStatus::MaxIterations: return "max-iterations";
    case LBFGSStatus::MaxEvaluations: return "max-evaluations";
    case LBFGSStatus::LineSearchFailure: return "line-search-failure";
  }
  return "?";
}

namespace {

struct EvalLimit {};

}  // namespace

LBFGSResult lbfgs_minimize(const Objective& f, const VectorXd& x0, const Box& box, const LBFGSOptions& opt) {
  box.validate();
  require_dim(x0.size() == box.d(), "start point dimension");
  LBFGSResult res;
  const Index d = box.d();

  VectorXd x = box.clip(x0), g(d);
  double fx = 0.0;
  auto eval = [&](const VectorXd& p, VectorXd& gp) {
    if (opt.max_evals > 0 && res.evaluations >= opt.max_evals) throw EvalLimit{};
    ++res.evaluations;
    return f(p, &gp);
  };
  auto finish = [&](LBFGSStatus s) {
    res.x = x;
    res.f = fx;
    res.grad = g;
    res.status = s;
    return res;
  };

  try {
    fx = eval(x, g);
  } catch (const EvalLimit&) {
    res.x = x;
    res.status = LBFGSStatus::MaxEvaluations;
    return res;
  }
  res.history.push_back(fx);

  std::deque<std::pair<VectorXd, VectorXd>> mem;
  auto is_free = [&](Index i) {
    return !((x(i) <= box.lower(i) && g(i) > 0) || (x(i) >= box.upper(i) && g(i) < 0));
  };

  try {
    for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
      const VectorXd pg = box.clip(x - g) - x;
      if (pg.lpNorm<Eigen::Infinity>() <= opt.g_tol) return finish(LBFGSStatus::Converged);

      VectorXd q = g;
      for (Index i = 0; i < d; ++i)
        if (!is_free(i)) q(i) = 0.0;

      bool accepted = false;
      for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
        // Two-loop recursion.
        VectorXd dir = q;
        std::vector<double> a(mem.size());
        for (std::size_t j = mem.size(); j-- > 0;) {
          const auto& [s, y] = mem[j];
          a[j] = s.dot(dir) / s.dot(y);
          dir -= a[j] * y;
        }
        if (!mem.empty()) dir *= mem.back().first.dot(mem.back().second) / mem.back().second.squaredNorm();
        for (std::size_t j = 0; j < mem.size(); ++j) {
          const auto& [s, y] = mem[j];
          dir += (a[j] - y.dot(dir) / s.dot(y)) * s;
        }
        dir = -dir;
        for (Index i = 0; i < d; ++i)
          if (!is_free(i)) dir(i) = 0.0;
        if (!(dir.dot(g) < 0)) {
          mem.clear();
          dir = -q;
        }

        double t = mem.empty() ? std::min(1.0, box.max_width() / std::max(dir.lpNorm<Eigen::Infinity>(), 1e-300)) : 1.0;
        VectorXd gn(d);
        for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
          const VectorXd xn = box.clip(x + t * dir);
          if ((xn - x).lpNorm<Eigen::Infinity>() == 0.0) break;
          const double fn = eval(xn, gn);
          if (std::isfinite(fn) && fn <= fx + 1e-4 * g.dot(xn - x) && fn <= fx) {
            const VectorXd s = xn - x, y = gn - g;
            if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
              mem.emplace_back(s, y);
              if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
            }
            x = xn;
            fx = fn;
            g = gn;
            res.history.push_back(fx);
            accepted = true;
            break;
          }
        }
        if (!accepted) {
          if (mem.empty()) return finish(LBFGSStatus::LineSearchFailure);
          mem.clear();
        }
      }
      if (!accepted) return finish(LBFGSStatus::LineSearchFailure);
    }
  } catch (const EvalLimit&) {
    return finish(LBFGSStatus::MaxEvaluations);
  }
  const VectorXd pg = box.clip(x - g) - x;
  return finish(pg.lpNorm<Eigen::Infinity>() <= opt.g_tol ? LBFGSStatus::Converged : LBFGSStatus::MaxIterations);
}

// ---------------------------------------------------------------------------
// Strategies

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Random: return "random";
    case Strategy::LBFGS: return "lbfgs";
    case Strategy::LBFGS_R: return "lbfgs-r";
    case Strategy::BO: return "bo";
    case Strategy::BO_Q: return "bo-q";
    case Strategy::FOBO: return "fobo";
    case Strategy::FOBO_Q: return "fobo-q";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::Random, Strategy::LBFGS, Strategy::LBFGS_R, Strategy::BO, Strategy::BO_Q, Strategy::FOBO,
                     Strategy::FOBO_Q})
    if (to_string(s) == name) return s;
  throw UnknownName("unknown strategy '" + name + "' (random, lbfgs, lbfgs-r, bo, bo-q, fobo, fobo-q)");
}

bool uses_gradients(Strategy s) {
  return s == Strategy::LBFGS || s == Strategy::LBFGS_R || s == Strategy::FOBO || s == Strategy::FOBO_Q;
}

bool is_bayesian(Strategy s) {
  return s == Strategy::BO || s == Strategy::BO_Q || s == Strategy::FOBO || s == Strategy::FOBO_Q;
}

KernelExpr default_surrogate(Strategy s, double c) {
  if (s == Strategy::BO_Q || s == Strategy::FOBO_Q) return quadratic_mixture(c);
  return matern52();
}

namespace {

class Runner {
 public:
  Runner(const Objective& f, const BOConfig& cfg) : f_(f), cfg_(cfg), rng_(cfg.seed) {
    cfg_.box.validate();
    if (cfg_.budget < 1) throw DomainError("budget must be at least 1");
    if (!(cfg_.epsilon > 0)) throw DomainError("epsilon must be positive");
    grads_ = uses_gradients(cfg_.strategy);
  }

  BOTrace run() {
    switch (cfg_.strategy) {
      case Strategy::Random:
        while (remaining()) observe(cfg_.box.uniform(rng_), false);
        break;
      case Strategy::LBFGS:
      case Strategy::LBFGS_R: run_lbfgs(); break;
      default: run_bo(); break;
    }
    return std::move(trace_);
  }

 private:
  bool remaining() const { return static_cast<int>(trace_.records.size()) < cfg_.budget; }

  double observe(const VectorXd& x, bool restart, VectorXd* grad_out = nullptr) {
    BORecord r;
    r.x = x;
    r.restart = restart;
    if (grads_) {
      VectorXd g(x.size());
      r.f = f_(x, &g);
      r.grad = g;
      if (grad_out) *grad_out = g;
    } else {
      r.f = f_(x, nullptr);
    }
    if (trace_.records.empty() || r.f < trace_.f_best) {
      trace_.f_best = r.f;
      trace_.x_best = x;
    }
    r.best = trace_.f_best;
    trace_.records.push_back(std::move(r));
    return trace_.records.back().f;
  }

  void run_lbfgs() {
    const bool restarts = cfg_.strategy == Strategy::LBFGS_R;
    VectorXd x0 = cfg_.box.uniform(rng_);
    bool restart_flag = false;
    while (remaining()) {
      LBFGSOptions o;
      o.g_tol = restarts ? 1e-6 : 1e-8;
      o.max_iter = 1 << 20;
      o.max_evals = cfg_.budget - static_cast<int>(trace_.records.size());
      bool first = true;
      Objective tracked = [&](const VectorXd& x, VectorXd* g) {
        const double v = observe(x, first && restart_flag, g);
        first = false;
        return v;
      };
      const LBFGSResult r = lbfgs_minimize(tracked, x0, cfg_.box, o);
      if (restarts) {
        x0 = cfg_.box.uniform(rng_);
        restart_flag = true;
      } else {
        // Without restarts the search continues from where it stopped.
        x0 = r.x;
      }
    }
  }

  void run_bo() {
    const KernelExpr k = cfg_.kernel ? *cfg_.kernel : default_surrogate(cfg_.strategy, cfg_.quadratic_offset);
    const Index d = cfg_.box.d();
    std::normal_distribution<double> normal(0.0, 1.0);
    observe(cfg_.box.uniform(rng_), false);
    while (remaining()) {
      const Index n = static_cast<Index>(trace_.records.size());
      GradObservations obs;
      obs.X.resize(d, n);
      obs.y.resize(n);
      if (grads_) obs.G.resize(d, n);
      for (Index i = 0; i < n; ++i) {
        const BORecord& r = trace_.records[static_cast<std::size_t>(i)];
        obs.X.col(i) = r.x;
        obs.y(i) = r.f;
        if (grads_) obs.G.col(i) = r.grad;
      }
      obs.noise_value = cfg_.noise_value;
      obs.noise_grad = cfg_.noise_grad;

      VectorXd proposal;
      try {
        FitOptions fo;
        fo.solver = cfg_.solver;
        const Posterior post = fit(k, obs, fo);
        const double f_best = trace_.f_best;
        Objective acq = [&](const VectorXd& x, VectorXd* g) { return neg_log_ei(post.predict(x), f_best, g); };
        VectorXd start = trace_.records.back().x;
        for (Index i = 0; i < d; ++i) start(i) += cfg_.start_jitter * cfg_.box.max_width() * normal(rng_);
        LBFGSOptions o;
        o.max_iter = cfg_.acquisition_iters;
        o.g_tol = 1e-9;
        const LBFGSResult r = lbfgs_minimize(acq, cfg_.box.clip(start), cfg_.box, o);
        proposal = r.x;
        for (const auto& w : post.warnings()) trace_.warnings.push_back("iteration " + std::to_string(n) + ": " + w);
      } catch (const Error& e) {
        trace_.warnings.push_back("iteration " + std::to_string(n) + ": " + e.what() + "; sampling uniformly");
        proposal = cfg_.box.uniform(rng_);
      }

      double dmin = std::numeric_limits<double>::infinity();
      for (Index i = 0; i < n; ++i) dmin = std::min(dmin, (obs.X.col(i) - proposal).norm());
      const bool restart = dmin < cfg_.epsilon;
      observe(restart ? cfg_.box.uniform(rng_) : proposal, restart);
      trace_.records.back().proposal = proposal;
    }
  }

  const Objective& f_;
  BOConfig cfg_;
  std::mt19937_64 rng_;
  bool grads_ = false;
  BOTrace trace_;
};

}  // namespace

BOTrace bo_run(const Objective& objective, const BOConfig& config) { return Runner(objective, config).run(); }

}  // namespace gradkernel
