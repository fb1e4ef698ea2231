#pragma once

// Second-order covariance operators. For a kernel k and points x, y:
//   h_x k        the Hessian ∇ₓ∇ₓᵀk stored as vec (length d²),
//   HessGrad     h_x ∇ᵧᵀ k, a d²×d operator,
//   HessHess     h_x h_yᵀ k, a d²×d² operator.
// vec is column major: vec(A)[i + d·j] = A(i, j), so the shuffle S satisfies
// S vec(A) = vec(Aᵀ) and (A⊗B) vec(V) = vec(B V Aᵀ).

#include <Eigen/Dense>
#include <memory>
#include <variant>
#include <vector>

#include "gradkernel/grad_block.hpp"
#include "gradkernel/kernel.hpp"

namespace gradkernel {

/// S vec(A) = vec(Aᵀ) for a square A given by its vec.
VectorXd shuffle_apply(const VectorXd& v);

/// (aaᵀ ⊕ bbᵀ) v = vec(H aaᵀ) + vec(bbᵀ H), H the d×d reshape of v.
VectorXd kron_sum_rank1_apply(const VectorXd& a, const VectorXd& b, const VectorXd& v);

/// (U ⊗ U) vec(H) = vec(U H Uᵀ) for U of shape r×d and v = vec(H) of length d².
VectorXd warp_kron_apply(const MatrixXd& U, const VectorXd& v);

/// Structured d²×d operator for h_x∇ᵧᵀk.
class HessGradBlock {
 public:
  explicit HessGradBlock(Index dim = 0) : dim_(dim) {}

  Index dim() const { return dim_; }
  std::size_t term_count() const { return terms_.size(); }
  /// Scalars held by the representation (shared children counted once per use).
  std::size_t storage() const;
  bool has_dense() const;

  /// W C Rᵀ with W of shape d²×p, C p×q and R d×q.
  void add_low_rank(MatrixXd W, MatrixXd C, MatrixXd R);
  /// v ↦ coef·(I + S) vec((G v) aᵀ), i.e. coef·(I⊗a + a⊗I)-style reshape terms.
  void add_sym_outer(double coef, std::shared_ptr<const GradientBlock> G, VectorXd a);
  /// v ↦ coef·(Jx⊗Jx)ᵀ inner (Jy v).
  void add_sandwich(double coef, std::shared_ptr<const Jacobian> jx, std::shared_ptr<const HessGradBlock> inner,
                    std::shared_ptr<const Jacobian> jy);
  void add_dense(MatrixXd M);

  HessGradBlock& operator+=(const HessGradBlock& other);
  HessGradBlock& operator*=(double s);
  friend HessGradBlock operator*(double s, HessGradBlock b) { return b *= s; }

  /// out (d²) += coef · B v
  void apply_add(const double* v, double* out, double coef = 1.0) const;
  /// out (d) += coef · Bᵀ u
  void apply_transpose_add(const double* u, double* out, double coef = 1.0) const;
  VectorXd apply(const VectorXd& v) const;
  VectorXd apply_transpose(const VectorXd& u) const;

 private:
  struct LowRank {
    MatrixXd W, C, R;
  };
  struct SymOuter {
    double coef;
    std::shared_ptr<const GradientBlock> G;
    VectorXd a;
  };
  struct Sandwich {
    double coef;
    std::shared_ptr<const Jacobian> jx, jy;
    std::shared_ptr<const HessGradBlock> inner;
  };
  struct Dense {
    MatrixXd M;
  };
  using Term = std::variant<LowRank, SymOuter, Sandwich, Dense>;

  Index dim_;
  std::vector<Term> terms_;
};

/// Structured d²×d² operator for h_x h_yᵀ k.
class HessHessBlock {
 public:
  explicit HessHessBlock(Index dim = 0) : dim_(dim) {}

  Index dim() const { return dim_; }
  std::size_t term_count() const { return terms_.size(); }
  std::size_t storage() const;
  bool has_dense() const;

  /// W C Rᵀ with W of shape d²×p and R of shape d²×q.
  void add_low_rank(MatrixXd W, MatrixXd C, MatrixXd R);
  /// v ↦ alpha·v + beta·S v
  void add_shuffle_identity(double alpha, double beta);
  /// v ↦ coef·(aaᵀ ⊕ bbᵀ)(I + S) v
  void add_kron_sum(double coef, VectorXd a, VectorXd b);
  /// v ↦ coef·(I + S) vec(G (V + Vᵀ) b aᵀ)
  void add_sym_outer_vec(double coef, std::shared_ptr<const GradientBlock> G, VectorXd a, VectorXd b);
  /// v ↦ coef·(I + S) vec(Gl (V + Vᵀ) Grᵀ)
  void add_sym_gg(double coef, std::shared_ptr<const GradientBlock> Gl, std::shared_ptr<const GradientBlock> Gr);
  /// v ↦ coef·(I + S) vec((Hᵀ v) aᵀ) with H = h_y∇ₓᵀ of a child
  void add_sym_outer_gh(double coef, std::shared_ptr<const HessGradBlock> H, VectorXd a);
  /// v ↦ coef·B((V + Vᵀ) b) with B = h_x∇ᵧᵀ of a child
  void add_contract(double coef, std::shared_ptr<const HessGradBlock> B, VectorXd b);
  /// v ↦ coef·(Jx⊗Jx)ᵀ inner (Jy⊗Jy) v
  void add_sandwich(double coef, std::shared_ptr<const Jacobian> jx, std::shared_ptr<const HessHessBlock> inner,
                    std::shared_ptr<const Jacobian> jy);
  void add_dense(MatrixXd M);

  HessHessBlock& operator+=(const HessHessBlock& other);
  HessHessBlock& operator*=(double s);
  friend HessHessBlock operator*(double s, HessHessBlock b) { return b *= s; }

  /// out += coef · B v
  void apply_add(const double* v, double* out, double coef = 1.0) const;
  VectorXd apply(const VectorXd& v) const;

 private:
  struct LowRank {
    MatrixXd W, C, R;
  };
  struct ShuffleIdentity {
    double alpha, beta;
  };
  struct KronSum {
    double coef;
    VectorXd a, b;
  };
  struct SymOuterVec {
    double coef;
    std::shared_ptr<const GradientBlock> G;
    VectorXd a, b;
  };
  struct SymGG {
    double coef;
    std::shared_ptr<const GradientBlock> Gl, Gr;
  };
  struct SymOuterGH {
    double coef;
    std::shared_ptr<const HessGradBlock> H;
    VectorXd a;
  };
  struct Contract {
    double coef;
    std::shared_ptr<const HessGradBlock> B;
    VectorXd b;
  };
  struct Sandwich {
    double coef;
    std::shared_ptr<const Jacobian> jx, jy;
    std::shared_ptr<const HessHessBlock> inner;
  };
  struct Dense {
    MatrixXd M;
  };
  using Term = std::variant<LowRank, ShuffleIdentity, KronSum, SymOuterVec, SymGG, SymOuterGH, Contract, Sandwich, Dense>;

  Index dim_;
  std::vector<Term> terms_;
};

MatrixXd materialize(const HessGradBlock& block);
MatrixXd materialize(const HessHessBlock& block);

/// Every covariance between value, gradient and Hessian of k at (x, y).
/// hgs is h_y∇ₓᵀk, so the gradient-Hessian block ∇ₓ h_yᵀk is its transpose.
struct HessianResult {
  double value = 0.0;
  VectorXd gx, gy;
  GradientBlock G;
  VectorXd hx, hy;
  HessGradBlock hg, hgs;
  HessHessBlock hh;
};

struct HessianOptions {
  enum class Mode { Structured, DenseFallback };
  Mode mode = Mode::Structured;
  /// Largest d for which unsupported nodes are differentiated densely.
  Index dense_cap = 10;
};

/// Structured second-order blocks for isotropic, dot-product and linear
/// functional primitives, sums, scales, chains, vertical scaling and linear
/// warps. Other nodes are differentiated densely when d ≤ dense_cap and
/// raise UnsupportedNode otherwise. Matérn-5/2 is only once differentiable in
/// each argument and raises NonDifferentiable.
HessianResult hessian_blocks(const KernelExpr& k, const VectorXd& x, const VectorXd& y,
                             const HessianOptions& options = {});

/// All blocks by fourth-order forward mode over evaluate.
HessianResult dense_hessian_blocks(const KernelExpr& k, const VectorXd& x, const VectorXd& y);

}  // namespace gradkernel
