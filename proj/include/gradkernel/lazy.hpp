#pragma once

// Lazily evaluated kernel matrices over value, gradient and optionally Hessian
// observations. Blocks are produced per point pair inside the multiply and
// discarded immediately, so a multiply never holds more than one structured
// block per worker.
//
// Layout is derivative-order major:
//   [ f(x₁) … f(xₙ) | ∇f(x₁) … ∇f(xₙ) | vec∇²f(x₁) … vec∇²f(xₙ) ]
// to_point_major / from_point_major convert to the interleaved ordering
// [ f(x₁) ∇f(x₁) …  f(xₙ) ∇f(xₙ) ].

#include <Eigen/Dense>
#include <optional>

#include "gradkernel/errors.hpp"
#include "gradkernel/kernel.hpp"

namespace gradkernel {

struct SolveReport {
  int iterations = 0;
  double final_residual = 0.0;
  bool converged = false;
};

/// CG did not reach the tolerance; carries the best iterate.
class NotConverged : public Error {
 public:
  NotConverged(VectorXd x, SolveReport report)
      : Error("conjugate gradients did not converge"), x_(std::move(x)), report_(report) {}
  const VectorXd& best() const { return x_; }
  const SolveReport& report() const { return report_; }

 private:
  VectorXd x_;
  SolveReport report_;
};

class LazyBlockMatrix {
 public:
  struct Options {
    enum class Mode { Structured, DenseFallback };
    Mode mode = Mode::Structured;
    bool gradients = true;
    bool hessians = false;
    double noise_value = 0.0;
    double noise_grad = 0.0;
    double noise_hess = 0.0;
    /// Worker threads over block rows; 0 reads GRADKERNEL_THREADS (default 1).
    int threads = 1;
  };

  /// Points are the columns of X.
  LazyBlockMatrix(KernelExpr k, MatrixXd X, Options options);
  LazyBlockMatrix(KernelExpr k, MatrixXd X) : LazyBlockMatrix(std::move(k), std::move(X), Options{}) {}
  ~LazyBlockMatrix();
  LazyBlockMatrix(LazyBlockMatrix&&) noexcept;
  LazyBlockMatrix& operator=(LazyBlockMatrix&&) noexcept;

  Index n() const { return X_.cols(); }
  Index d() const { return X_.rows(); }
  /// Rows per point: 1, 1 + d or 1 + d + d².
  Index per_point() const;
  Index total_dim() const { return n() * per_point(); }
  const KernelExpr& kernel() const { return k_; }
  const MatrixXd& points() const { return X_; }
  const Options& options() const { return opt_; }
  /// True when a top-level linear warp is applied once per point rather than per block.
  bool factored() const { return inner_ != nullptr; }

  /// out = M v
  void mvm(const double* v, double* out) const;
  VectorXd mvm(const VectorXd& v) const;

  /// Dense matrix of the operator. Refuses total_dim > 4096 unless forced.
  MatrixXd materialize(bool force = false) const;

  /// Dense per-point diagonal blocks (per_point × per_point each), noise included.
  std::vector<MatrixXd> diagonal_blocks() const;

  VectorXd to_point_major(const VectorXd& v) const;
  VectorXd from_point_major(const VectorXd& v) const;

 private:
  void mvm_rows(const double* v, double* out, Index row_begin, Index row_end) const;
  void mvm_direct(const double* v, double* out) const;
  void mvm_factored(const double* v, double* out) const;
  void add_noise(const double* v, double* out) const;
  /// Dense covariance of point i with point j in point-local order, noise excluded.
  MatrixXd pair_block(Index i, Index j) const;
  void add_point_noise(MatrixXd& B) const;

  KernelExpr k_;
  MatrixXd X_;
  Options opt_;
  // Factored top-level warp: M = a·T inner Tᵀ with T = blockdiag(1, Jᵀ, Jᵀ⊗Jᵀ).
  std::unique_ptr<LazyBlockMatrix> inner_;
  double outer_scale_ = 1.0;
  MatrixXd warp_;  // r×d; diagonal warps store a d×d diagonal matrix
  bool warp_diagonal_ = false;
};

struct CGOptions {
  double tol = 1e-8;
  int max_iter = 1000;
  bool block_jacobi = false;
};

/// Solves (M + shift·I) x = b. Throws NotConverged with the best iterate.
std::pair<VectorXd, SolveReport> cg_solve(const LazyBlockMatrix& M, double shift, const VectorXd& b,
                                          const CGOptions& options = {});
std::pair<VectorXd, SolveReport> cg_solve(const LazyBlockMatrix& M, double shift, const VectorXd& b, double tol,
                                          int max_iter);

/// Rank-revealing U (r×d) with ‖E − UᵀU‖_max ≤ tol. Throws NotPSD on a pivot below −tol.
MatrixXd pivoted_cholesky(const MatrixXd& E, double tol = 1e-12);

/// h((x−y)ᵀE(x−y))-style energetic inner products: inner ∘ U with E ≈ UᵀU.
KernelExpr energetic_warp(const MatrixXd& E, KernelExpr inner, double tol = 1e-12);

/// Worker count from GRADKERNEL_THREADS, at least 1.
int env_threads();

}  // namespace gradkernel
