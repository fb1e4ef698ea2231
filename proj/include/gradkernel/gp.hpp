#pragma once

// Zero-mean GP conditioning on values and, optionally, gradients.

#include <Eigen/Dense>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "gradkernel/kernel.hpp"
#include "gradkernel/lazy.hpp"

namespace gradkernel {

/// Observations at the columns of X. G holds one gradient per column; an
/// empty G (0 columns) conditions on values only.
struct GradObservations {
  MatrixXd X;
  VectorXd y;
  MatrixXd G;
  double noise_value = 1e-8;
  double noise_grad = 1e-8;

  Index n() const { return X.cols(); }
  Index d() const { return X.rows(); }
  bool has_gradients() const { return G.cols() > 0; }
  /// Throws on shape mismatches or non-finite entries.
  void validate() const;
};

struct FitOptions {
  enum class Solver { CG, DenseCholesky };
  Solver solver = Solver::CG;
  double tol = 1e-10;
  int max_iter = 5000;
  LazyBlockMatrix::Options::Mode mode = LazyBlockMatrix::Options::Mode::Structured;
  int threads = 1;
};

/// Mean, variance and their gradients at one query point.
struct Prediction {
  double mean = 0.0;
  VectorXd mean_grad;
  double var = 0.0;
  VectorXd var_grad;
};

class Posterior {
 public:
  const KernelExpr& kernel() const { return k_; }
  const GradObservations& observations() const { return obs_; }
  /// Coefficients in derivative-order-major layout [values | gradients].
  const VectorXd& alpha() const { return alpha_; }
  const SolveReport& report() const { return report_; }
  const FitOptions& options() const { return opt_; }
  Index d() const { return d_; }
  Index n() const { return obs_.n(); }
  /// Non-fatal events such as variance clamping.
  std::vector<std::string> warnings() const;

  double predict_mean(const VectorXd& x) const;
  VectorXd predict_mean_grad(const VectorXd& x) const;
  /// Posterior variance, clamped at 0.
  double predict_var(const VectorXd& x) const;

  /// Analytic ∇ of the unclamped variance.
  VectorXd predict_var_grad(const VectorXd& x) const;
  /// Everything at once from a single pass over the training points.
  Prediction predict(const VectorXd& x) const;

  /// k_* = cov(f(x), observations) in the operator layout.
  VectorXd cross_covariance(const VectorXd& x) const;

 private:
  friend Posterior fit(const KernelExpr&, const GradObservations&, const FitOptions&);
  friend Posterior prior_posterior(const KernelExpr&, Index);

  VectorXd solve(const VectorXd& b) const;

  KernelExpr k_;
  GradObservations obs_;
  FitOptions opt_;
  Index d_ = 0;
  VectorXd alpha_;
  SolveReport report_;
  std::shared_ptr<const LazyBlockMatrix> op_;
  std::shared_ptr<const Eigen::LDLT<MatrixXd>> factor_;
  struct WarningLog {
    std::mutex m;
    std::vector<std::string> items;
  };
  std::shared_ptr<WarningLog> warnings_ = std::make_shared<WarningLog>();
};

/// Solves (K + Σ) α = [y; vec G]. Throws NotConverged or NonDifferentiable.
Posterior fit(const KernelExpr& k, const GradObservations& obs, const FitOptions& options = {});

/// Posterior with no data in d dimensions.
Posterior prior_posterior(const KernelExpr& k, Index d);

}  // namespace gradkernel
