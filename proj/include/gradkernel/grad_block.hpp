#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gradkernel/kernel.hpp"

namespace gradkernel {

/// r×d Jacobian of a warp, either dense or diagonal (ARD).
class Jacobian {
 public:
  static Jacobian dense(MatrixXd J);
  static Jacobian diagonal(VectorXd s);

  Index rows() const { return diagonal_ ? s_.size() : J_.rows(); }
  Index cols() const { return diagonal_ ? s_.size() : J_.cols(); }
  bool is_diagonal() const { return diagonal_; }

  /// out(r) = J x
  void apply(const double* x, double* out) const;
  /// out(d) += coef · Jᵀ w
  void apply_transpose_add(const double* w, double* out, double coef) const;
  MatrixXd to_dense() const;

 private:
  bool diagonal_ = false;
  MatrixXd J_;
  VectorXd s_;
};

/// Structured d×d operator G[k](x, y) in canonical sum form
///   α·I + diag(D) + U·C·Vᵀ + Σ sᵢ·Jxᵢᵀ·Innerᵢ·Jyᵢ + Dense,
/// where any part may be absent. Every structured part applies in O(d·r).
class GradientBlock {
 public:
  enum class Variant { Zero, ScaledIdentityPlusLowRank, DiagonalPlusLowRank, Sandwich, BlockSum, DenseFallback };

  GradientBlock() = default;
  explicit GradientBlock(Index dim) : dim_(dim) {}

  static GradientBlock scaled_identity(Index dim, double alpha);
  static GradientBlock diagonal(VectorXd diag);
  static GradientBlock low_rank(MatrixXd U, MatrixXd C, MatrixXd V);
  static GradientBlock rank_one(double c, const VectorXd& u, const VectorXd& v);
  static GradientBlock sandwich(Jacobian jx, GradientBlock inner, Jacobian jy);
  static GradientBlock dense(MatrixXd M);

  Index dim() const { return dim_; }
  Variant variant() const;
  /// Columns in the explicit low-rank factor.
  Index rank() const { return U_.cols(); }
  /// Scalars stored by this block, including nested sandwich interiors.
  std::size_t storage() const;

  double identity_coefficient() const { return alpha_; }
  const VectorXd& diagonal_part() const { return diag_; }
  bool is_scaled_identity() const;

  void add_identity(double a) { alpha_ += a; }
  void add_diagonal(const VectorXd& d);
  void add_low_rank(const MatrixXd& U, const MatrixXd& C, const MatrixXd& V);
  void add_rank_one(double c, const VectorXd& u, const VectorXd& v);
  void add_dense(const MatrixXd& M);

  GradientBlock& operator+=(const GradientBlock& other);
  GradientBlock& operator*=(double s);
  friend GradientBlock operator*(double s, GradientBlock b) { return b *= s; }

  GradientBlock transposed() const;

  /// out += coef · B v
  void apply_add(const double* v, double* out, double coef = 1.0) const;
  /// out += coef · Bᵀ v
  void apply_transpose_add(const double* v, double* out, double coef = 1.0) const;
  VectorXd apply(const VectorXd& v) const;
  VectorXd apply_transpose(const VectorXd& v) const;

 private:
  struct SandwichTerm {
    double scale = 1.0;
    std::shared_ptr<const Jacobian> jx;
    std::shared_ptr<const Jacobian> jy;
    std::shared_ptr<const GradientBlock> inner;
    bool transposed = false;
  };

  Index dim_ = 0;
  double alpha_ = 0.0;
  VectorXd diag_;
  MatrixXd U_, C_, V_;
  std::vector<SandwichTerm> sandwiches_;
  MatrixXd dense_;
};

std::string to_string(GradientBlock::Variant v);

/// Exact product with the represented operator.
VectorXd apply(const GradientBlock& block, const VectorXd& v);
/// d×d matrix obtained by applying the block to the canonical basis.
MatrixXd materialize(const GradientBlock& block);

/// k(x,y) with ∇ₓk and ∇ᵧk.
struct GradPair {
  double value = 0.0;
  VectorXd gx;
  VectorXd gy;
};

struct GradientResult {
  GradientBlock block;
  GradPair pair;
};

struct GradientOptions {
  enum class Mode { Structured, DenseFallback };
  enum class ProductRule { Auto, LeaveOneOut };
  Mode mode = Mode::Structured;
  ProductRule product_rule = ProductRule::Auto;
};

/// Structure-aware derivation of G[k](x,y) = ∇ₓ∇ᵧᵀ k together with the cross
/// gradients. Dispatches on the node kind and recurses through children;
/// kernels that depend on a single proto collapse into one chain-rule step.
GradientResult gradient_block(const KernelExpr& k, const VectorXd& x, const VectorXd& y,
                              const GradientOptions& options = {});

/// Dense G[k] and cross gradients by nested forward-mode differentiation.
GradientResult dense_gradient_block(const KernelExpr& k, const VectorXd& x, const VectorXd& y);

/// First-order forward-mode value and gradients (independent of the structure rules).
GradPair forward_gradients(const KernelExpr& k, const VectorXd& x, const VectorXd& y);

}  // namespace gradkernel
