#pragma once

// Expected improvement, a box-projected L-BFGS, and Bayesian optimization with
// restarts alongside random-sampling and L-BFGS baselines. Everything
// minimizes.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gradkernel/errors.hpp"
#include "gradkernel/gp.hpp"

namespace gradkernel {

/// Axis-aligned box.
struct Box {
  VectorXd lower;
  VectorXd upper;

  static Box cube(Index d, double lo, double hi);
  Index d() const { return lower.size(); }
  void validate() const;
  VectorXd clip(const VectorXd& x) const;
  VectorXd uniform(std::mt19937_64& rng) const;
  double max_width() const;
};

/// Value with optional gradient output (grad may be null).
using Objective = std::function<double(const VectorXd& x, VectorXd* grad)>;

struct EIResult {
  double ei = 0.0;
  VectorXd grad;
  /// σ below 1e−12: ei = max(f_best − μ, 0) and the gradient comes from the mean.
  bool degenerate_variance = false;
};

EIResult expected_improvement(const Posterior& post, const VectorXd& x, double f_best);
/// Same formula from a precomputed prediction.
EIResult expected_improvement(const Prediction& p, double f_best);

struct LBFGSOptions {
  int memory = 10;
  int max_iter = 200;
  double g_tol = 1e-8;
  /// Objective evaluations allowed; 0 means unlimited.
  int max_evals = 0;
};

enum class LBFGSStatus { Converged, MaxIterations, MaxEvaluations, LineSearchFailure };
std::string to_string(LBFGSStatus s);

struct LBFGSResult {
  VectorXd x;
  double f = 0.0;
  VectorXd grad;
  LBFGSStatus status = LBFGSStatus::MaxIterations;
  int iterations = 0;
  int evaluations = 0;
  /// f after every accepted step, starting with f(x0).
  std::vector<double> history;
};

/// Projected L-BFGS with Armijo backtracking. Converged means the projected
/// gradient ‖P(x − g) − x‖∞ fell to g_tol. A failed line search returns the
/// best iterate.
LBFGSResult lbfgs_minimize(const Objective& f, const VectorXd& x0, const Box& box, const LBFGSOptions& options = {});

enum class Strategy { Random, LBFGS, LBFGS_R, BO, BO_Q, FOBO, FOBO_Q };
std::string to_string(Strategy s);
/// Accepts random, lbfgs, lbfgs-r, bo, bo-q, fobo, fobo-q.
Strategy parse_strategy(const std::string& name);
bool uses_gradients(Strategy s);
bool is_bayesian(Strategy s);

struct BOConfig {
  Strategy strategy = Strategy::FOBO_Q;
  int budget = 60;
  double epsilon = 1e-4;
  Box box;
  std::uint64_t seed = 0;
  double noise_value = 1e-8;
  double noise_grad = 1e-8;
  /// Offset of the quadratic part in the Q variants.
  double quadratic_offset = 1.0;
  /// Acquisition L-BFGS iterations per step.
  int acquisition_iters = 30;
  /// Standard deviation of the acquisition start jitter, relative to the box width.
  double start_jitter = 0.05;
  /// Overrides the strategy default surrogate kernel.
  std::optional<KernelExpr> kernel;
  FitOptions::Solver solver = FitOptions::Solver::DenseCholesky;
};

struct BORecord {
  VectorXd x;
  double f = 0.0;
  VectorXd grad;  // empty unless the strategy observes gradients
  /// BO only: the acquisition optimum before the restart rule was applied.
  VectorXd proposal;
  double best = 0.0;
  /// BO: the proposal fell within ε of an observed point and was replaced by a
  /// uniform sample. L-BFGS-R: a random restart after local convergence.
  bool restart = false;
};

struct BOTrace {
  std::vector<BORecord> records;
  VectorXd x_best;
  double f_best = 0.0;
  std::vector<std::string> warnings;
};

/// Surrogate kernel a strategy uses by default: Matérn-5/2, plus (x·y + c)² for Q variants.
KernelExpr default_surrogate(Strategy s, double quadratic_offset = 1.0);

/// Runs exactly config.budget objective evaluations.
BOTrace bo_run(const Objective& objective, const BOConfig& config);

}  // namespace gradkernel
