#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradkernel/errors.hpp"
#include "gradkernel/jet.hpp"
#include "gradkernel/taylor.hpp"

namespace gradkernel {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// The scalar intermediate a primitive kernel depends on.
enum class Proto {
  SquaredDistance,   // r·r with r = x - y
  LinearFunctional,  // c·r
  Dot,               // x·y
};

struct InputTrait {
  enum class Kind { Isotropic, DotProduct, StationaryLinearFunctional, Generic };
  Kind kind = Kind::Generic;
  VectorXd c;  // set for StationaryLinearFunctional

  bool operator==(const InputTrait& o) const;
  bool is_generic() const { return kind == Kind::Generic; }
};

std::string to_string(InputTrait::Kind k);

/// Differentiable map u: ℝ^d → ℝ^r used by warped kernels.
class WarpMap {
 public:
  enum class Kind { Linear, Diagonal, Custom };
  /// Value and Jacobian (r×d) at a point.
  using CustomFn = std::function<void(const VectorXd& x, VectorXd& u, MatrixXd& jacobian)>;

  static WarpMap linear(MatrixXd U);
  static WarpMap diagonal(VectorXd scales);
  static WarpMap custom(Index input_dim, Index output_dim, CustomFn fn);

  Kind kind() const { return kind_; }
  Index input_dim() const { return input_dim_; }
  Index output_dim() const { return output_dim_; }
  const MatrixXd& matrix() const { return U_; }
  const VectorXd& scales() const { return s_; }
  bool is_linear() const { return kind_ != Kind::Custom; }

  VectorXd map(const VectorXd& x) const;
  void map_with_jacobian(const VectorXd& x, VectorXd& u, MatrixXd& jacobian) const;

  template <class T>
  std::vector<T> map(std::span<const T> x) const {
    if constexpr (std::is_same_v<T, double>) {
      VectorXd u = map(Eigen::Map<const VectorXd>(x.data(), static_cast<Index>(x.size())));
      return std::vector<double>(u.data(), u.data() + u.size());
    } else {
      if (kind_ == Kind::Custom) throw UnsupportedNode("custom warps cannot be evaluated on jets");
      std::vector<T> out(static_cast<std::size_t>(output_dim_));
      if (kind_ == Kind::Diagonal) {
        for (Index i = 0; i < output_dim_; ++i) out[i] = x[i] * s_[i];
      } else {
        for (Index i = 0; i < output_dim_; ++i) {
          T acc(0.0);
          for (Index j = 0; j < input_dim_; ++j) acc += x[j] * U_(i, j);
          out[i] = acc;
        }
      }
      return out;
    }
  }

 private:
  Kind kind_ = Kind::Linear;
  Index input_dim_ = 0;
  Index output_dim_ = 0;
  MatrixXd U_;
  VectorXd s_;
  CustomFn fn_;
};

/// User kernel without known structure; differentiated by forward mode.
struct CustomKernel {
  std::function<double(std::span<const double>, std::span<const double>)> eval;
  std::function<Jet<2>(std::span<const Jet<2>>, std::span<const Jet<2>>)> eval_jet;
};

class KernelExpr;

struct KernelNode {
  enum class Kind { Primitive, Sum, Product, DirectSum, DirectProduct, VerticalScale, Warp, Scale, Chain, Custom };

  Kind kind = Kind::Primitive;
  std::string label;
  Proto proto = Proto::SquaredDistance;
  VectorXd c;                                          // LinearFunctional vector
  ScalarFunction f = ScalarFunction::identity();       // Primitive/Chain outer; VerticalScale field profile
  std::vector<KernelExpr> children;
  double scale = 1.0;
  std::shared_ptr<const WarpMap> warp;
  std::shared_ptr<const CustomKernel> custom;
  Index input_dim = -1;                                // -1: any dimension
};

/// Immutable handle to a node of a kernel computational graph.
class KernelExpr {
 public:
  KernelExpr() = default;
  explicit KernelExpr(std::shared_ptr<const KernelNode> node) : node_(std::move(node)) {}

  const KernelNode& node() const { return *node_; }
  KernelNode::Kind kind() const { return node_->kind; }
  const std::vector<KernelExpr>& children() const { return node_->children; }
  Index input_dim() const { return node_->input_dim; }
  bool valid() const { return node_ != nullptr; }

  std::string to_string() const;
  /// Same graph with a new display label.
  KernelExpr labeled(std::string label) const;

 private:
  std::shared_ptr<const KernelNode> node_;
};

// -- primitives and combinators ------------------------------------------------

KernelExpr primitive(Proto proto, ScalarFunction f, VectorXd c = {});
KernelExpr sum(std::vector<KernelExpr> children);
KernelExpr product(std::vector<KernelExpr> children);
KernelExpr direct_sum(std::vector<KernelExpr> children);
KernelExpr direct_product(std::vector<KernelExpr> children);
/// f(x)·inner(x,y)·f(y) with the radial field f(x) = profile(x·x).
KernelExpr vertical_scale(ScalarFunction profile, KernelExpr inner);
KernelExpr warp(WarpMap u, KernelExpr inner);
KernelExpr scale(double a, KernelExpr inner);
/// f∘inner; folds into the primitive when inner is one.
KernelExpr chain(ScalarFunction f, KernelExpr inner);
KernelExpr custom(CustomKernel k, Index input_dim = -1);

// -- named zoo ----------------------------------------------------------------

KernelExpr rbf();
KernelExpr rational_quadratic(double alpha = 2.0);
KernelExpr matern52();
KernelExpr polynomial(double degree = 2, double offset = 1.0);
KernelExpr dot(double offset = 0.0);
KernelExpr cosine(VectorXd c);
KernelExpr exp_dot();
KernelExpr neural_network();
KernelExpr rbf_network();
/// Σ_q w_q · exp(-r·r/(2ℓ_q²)) · cos(2π μ_q·r)
KernelExpr spectral_mixture(std::vector<double> weights, std::vector<double> lengthscales,
                            std::vector<VectorXd> frequencies);
/// matern52 + (x·y + c)²
KernelExpr quadratic_mixture(double c = 1.0);
KernelExpr ard(VectorXd lengthscales, KernelExpr inner);
KernelExpr linear_warp(MatrixXd U, KernelExpr inner);

// -- evaluation ---------------------------------------------------------------

InputTrait input_trait(const KernelExpr& k);

/// The homogeneous expression k = φ(proto) as a Taylor expansion in the proto
/// value; empty when k is not a function of a single proto.
std::optional<Taylor4> homogeneous_profile(const KernelExpr& k, double proto_value, int order);

double proto_value(Proto p, const VectorXd& c, std::span<const double> x, std::span<const double> y);

namespace detail {

template <class T>
T proto_value(const KernelNode& n, std::span<const T> x, std::span<const T> y) {
  T acc(0.0);
  switch (n.proto) {
    case Proto::SquaredDistance:
      for (std::size_t i = 0; i < x.size(); ++i) {
        T r = x[i] - y[i];
        acc += r * r;
      }
      break;
    case Proto::LinearFunctional:
      for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * n.c[static_cast<Index>(i)];
      break;
    case Proto::Dot:
      for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
      break;
  }
  return acc;
}

template <class T>
T self_dot(std::span<const T> x) {
  T acc(0.0);
  for (const auto& xi : x) acc += xi * xi;
  return acc;
}

template <class T>
T evaluate_node(const KernelExpr& k, std::span<const T> x, std::span<const T> y) {
  const KernelNode& n = k.node();
  switch (n.kind) {
    case KernelNode::Kind::Primitive:
      return apply(n.f, proto_value<T>(n, x, y));
    case KernelNode::Kind::Sum: {
      T acc(0.0);
      for (const auto& ch : n.children) acc += evaluate_node<T>(ch, x, y);
      return acc;
    }
    case KernelNode::Kind::Product: {
      T acc(1.0);
      for (const auto& ch : n.children) acc = acc * evaluate_node<T>(ch, x, y);
      return acc;
    }
    case KernelNode::Kind::DirectSum:
    case KernelNode::Kind::DirectProduct: {
      const bool is_sum = n.kind == KernelNode::Kind::DirectSum;
      T acc(is_sum ? 0.0 : 1.0);
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        T v = evaluate_node<T>(n.children[i], x.subspan(i, 1), y.subspan(i, 1));
        acc = is_sum ? acc + v : acc * v;
      }
      return acc;
    }
    case KernelNode::Kind::VerticalScale: {
      T fx = apply(n.f, self_dot<T>(x));
      T fy = apply(n.f, self_dot<T>(y));
      return fx * evaluate_node<T>(n.children[0], x, y) * fy;
    }
    case KernelNode::Kind::Warp: {
      std::vector<T> ux = n.warp->map<T>(x);
      std::vector<T> uy = n.warp->map<T>(y);
      return evaluate_node<T>(n.children[0], std::span<const T>(ux), std::span<const T>(uy));
    }
    case KernelNode::Kind::Scale:
      return n.scale * evaluate_node<T>(n.children[0], x, y);
    case KernelNode::Kind::Chain:
      return apply(n.f, evaluate_node<T>(n.children[0], x, y));
    case KernelNode::Kind::Custom:
      if constexpr (std::is_same_v<T, double>) {
        return n.custom->eval(x, y);
      } else if constexpr (std::is_same_v<T, Jet<2>>) {
        if (!n.custom->eval_jet) throw UnsupportedNode("custom kernel has no jet evaluation");
        return n.custom->eval_jet(x, y);
      } else {
        throw UnsupportedNode("custom kernels support first-order derivatives only");
      }
  }
  throw UnsupportedNode("unknown kernel node");
}

void check_dims(const KernelExpr& k, std::size_t dx, std::size_t dy);

}  // namespace detail

/// k(x, y) for any scalar type: double or a Jet for forward-mode derivatives.
template <class T>
T evaluate(const KernelExpr& k, std::span<const T> x, std::span<const T> y) {
  detail::check_dims(k, x.size(), y.size());
  return detail::evaluate_node<T>(k, x, y);
}

double evaluate(const KernelExpr& k, const VectorXd& x, const VectorXd& y);

/// Dense n×n Gram matrix of the columns of X.
MatrixXd gram(const KernelExpr& k, const MatrixXd& X);

}  // namespace gradkernel
