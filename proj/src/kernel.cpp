#include "gradkernel/kernel.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace gradkernel {

bool InputTrait::operator==(const InputTrait& o) const {
  if (kind != o.kind) return false;
  if (kind != Kind::StationaryLinearFunctional) return true;
  return c.size() == o.c.size() && c == o.c;
}

std::string to_string(InputTrait::Kind k) {
  switch (k) {
    case InputTrait::Kind::Isotropic: return "Isotropic";
    case InputTrait::Kind::DotProduct: return "DotProduct";
    case InputTrait::Kind::StationaryLinearFunctional: return "StationaryLinearFunctional";
    case InputTrait::Kind::Generic: return "Generic";
  }
  return "?";
}

// -- WarpMap -------------------------------------------------------------------

WarpMap WarpMap::linear(MatrixXd U) {
  WarpMap w;
  w.kind_ = Kind::Linear;
  w.input_dim_ = U.cols();
  w.output_dim_ = U.rows();
  w.U_ = std::move(U);
  return w;
}

WarpMap WarpMap::diagonal(VectorXd scales) {
  WarpMap w;
  w.kind_ = Kind::Diagonal;
  w.input_dim_ = scales.size();
  w.output_dim_ = scales.size();
  w.s_ = std::move(scales);
  return w;
}

WarpMap WarpMap::custom(Index input_dim, Index output_dim, CustomFn fn) {
  WarpMap w;
  w.kind_ = Kind::Custom;
  w.input_dim_ = input_dim;
  w.output_dim_ = output_dim;
  w.fn_ = std::move(fn);
  return w;
}

VectorXd WarpMap::map(const VectorXd& x) const {
  require_dim(x.size() == input_dim_, "warp input dimension mismatch");
  switch (kind_) {
    case Kind::Linear: return U_ * x;
    case Kind::Diagonal: return s_.cwiseProduct(x);
    case Kind::Custom: {
      VectorXd u;
      MatrixXd J;
      fn_(x, u, J);
      return u;
    }
  }
  return {};
}

void WarpMap::map_with_jacobian(const VectorXd& x, VectorXd& u, MatrixXd& jacobian) const {
  require_dim(x.size() == input_dim_, "warp input dimension mismatch");
  switch (kind_) {
    case Kind::Linear:
      u = U_ * x;
      jacobian = U_;
      break;
    case Kind::Diagonal:
      u = s_.cwiseProduct(x);
      jacobian = s_.asDiagonal();
      break;
    case Kind::Custom:
      fn_(x, u, jacobian);
      require_dim(u.size() == output_dim_ && jacobian.rows() == output_dim_ && jacobian.cols() == input_dim_,
                  "custom warp returned inconsistent shapes");
      break;
  }
}

// -- construction --------------------------------------------------------------

namespace {

KernelExpr make(KernelNode node) { return KernelExpr(std::make_shared<const KernelNode>(std::move(node))); }

Index merged_dim(const std::vector<KernelExpr>& children) {
  Index d = -1;
  for (const auto& ch : children) {
    if (ch.input_dim() < 0) continue;
    if (d >= 0 && d != ch.input_dim()) throw DimensionMismatch("children declare different input dimensions");
    d = ch.input_dim();
  }
  return d;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

KernelExpr primitive(Proto proto, ScalarFunction f, VectorXd c) {
  KernelNode n;
  n.kind = KernelNode::Kind::Primitive;
  n.proto = proto;
  n.f = std::move(f);
  if (proto == Proto::LinearFunctional) {
    if (c.size() == 0) throw DimensionMismatch("linear-functional primitive needs a vector c");
    n.input_dim = c.size();
    n.c = std::move(c);
  }
  return make(std::move(n));
}

KernelExpr sum(std::vector<KernelExpr> children) {
  if (children.empty()) throw Error("sum needs at least one child");
  KernelNode n;
  n.kind = KernelNode::Kind::Sum;
  n.input_dim = merged_dim(children);
  n.children = std::move(children);
  return make(std::move(n));
}

KernelExpr product(std::vector<KernelExpr> children) {
  if (children.empty()) throw Error("product needs at least one child");
  KernelNode n;
  n.kind = KernelNode::Kind::Product;
  n.input_dim = merged_dim(children);
  n.children = std::move(children);
  return make(std::move(n));
}

namespace {
KernelExpr direct(KernelNode::Kind kind, std::vector<KernelExpr> children) {
  if (children.empty()) throw Error("direct sum/product needs one child per coordinate");
  for (const auto& ch : children) {
    if (ch.input_dim() > 1) throw DimensionMismatch("direct sum/product children must be one-dimensional");
  }
  KernelNode n;
  n.kind = kind;
  n.input_dim = static_cast<Index>(children.size());
  n.children = std::move(children);
  return make(std::move(n));
}
}  // namespace

KernelExpr direct_sum(std::vector<KernelExpr> children) {
  return direct(KernelNode::Kind::DirectSum, std::move(children));
}

KernelExpr direct_product(std::vector<KernelExpr> children) {
  return direct(KernelNode::Kind::DirectProduct, std::move(children));
}

KernelExpr vertical_scale(ScalarFunction profile, KernelExpr inner) {
  KernelNode n;
  n.kind = KernelNode::Kind::VerticalScale;
  n.f = std::move(profile);
  n.input_dim = inner.input_dim();
  n.children = {std::move(inner)};
  return make(std::move(n));
}

KernelExpr warp(WarpMap u, KernelExpr inner) {
  if (inner.input_dim() >= 0 && inner.input_dim() != u.output_dim()) {
    throw DimensionMismatch("warp output dimension does not match the inner kernel");
  }
  KernelNode n;
  n.kind = KernelNode::Kind::Warp;
  n.input_dim = u.input_dim();
  n.warp = std::make_shared<const WarpMap>(std::move(u));
  n.children = {std::move(inner)};
  return make(std::move(n));
}

KernelExpr scale(double a, KernelExpr inner) {
  if (!(a >= 0.0)) throw DomainError("kernel scale must be nonnegative");
  KernelNode n;
  n.kind = KernelNode::Kind::Scale;
  n.scale = a;
  n.input_dim = inner.input_dim();
  n.children = {std::move(inner)};
  return make(std::move(n));
}

KernelExpr chain(ScalarFunction f, KernelExpr inner) {
  if (inner.kind() == KernelNode::Kind::Primitive) {
    KernelNode n = inner.node();
    n.f = ScalarFunction::compose(f, n.f);
    n.label.clear();
    return make(std::move(n));
  }
  KernelNode n;
  n.kind = KernelNode::Kind::Chain;
  n.f = std::move(f);
  n.input_dim = inner.input_dim();
  n.children = {std::move(inner)};
  return make(std::move(n));
}

KernelExpr custom(CustomKernel k, Index input_dim) {
  KernelNode n;
  n.kind = KernelNode::Kind::Custom;
  n.custom = std::make_shared<const CustomKernel>(std::move(k));
  n.input_dim = input_dim;
  n.label = "custom";
  return make(std::move(n));
}

KernelExpr KernelExpr::labeled(std::string label) const {
  KernelNode n = *node_;
  n.label = std::move(label);
  return make(std::move(n));
}

std::string KernelExpr::to_string() const {
  const KernelNode& n = *node_;
  if (!n.label.empty()) return n.label;
  auto list = [&](const char* name) {
    std::string s = std::string(name) + "(";
    for (std::size_t i = 0; i < n.children.size(); ++i) s += (i ? ", " : "") + n.children[i].to_string();
    return s + ")";
  };
  switch (n.kind) {
    case KernelNode::Kind::Primitive: {
      const char* p = n.proto == Proto::SquaredDistance ? "r·r" : n.proto == Proto::Dot ? "x·y" : "c·r";
      return n.f.name() + "[" + p + "]";
    }
    case KernelNode::Kind::Sum: return list("sum");
    case KernelNode::Kind::Product: return list("prod");
    case KernelNode::Kind::DirectSum: return list("dsum");
    case KernelNode::Kind::DirectProduct: return list("dprod");
    case KernelNode::Kind::VerticalScale: return "vscale(" + n.f.name() + ", " + n.children[0].to_string() + ")";
    case KernelNode::Kind::Warp: return "warp(" + n.children[0].to_string() + ")";
    case KernelNode::Kind::Scale: return "scale(" + fmt(n.scale) + ", " + n.children[0].to_string() + ")";
    case KernelNode::Kind::Chain: return n.f.name() + "(" + n.children[0].to_string() + ")";
    case KernelNode::Kind::Custom: return "custom";
  }
  return "?";
}

// -- zoo -----------------------------------------------------------------------

KernelExpr rbf() { return primitive(Proto::SquaredDistance, ScalarFunction::exponential(-0.5)).labeled("rbf"); }

KernelExpr rational_quadratic(double alpha) {
  return primitive(Proto::SquaredDistance, ScalarFunction::rational_quadratic(alpha))
      .labeled("rq(alpha=" + fmt(alpha) + ")");
}

KernelExpr matern52() { return primitive(Proto::SquaredDistance, ScalarFunction::matern52()).labeled("matern52"); }

KernelExpr polynomial(double degree, double offset) {
  if (!(degree >= 1.0) || std::floor(degree) != degree) throw DomainError("polynomial degree must be an integer >= 1");
  return primitive(Proto::Dot, ScalarFunction::power(degree, offset))
      .labeled("poly(p=" + fmt(degree) + ", c=" + fmt(offset) + ")");
}

KernelExpr dot(double offset) {
  auto f = offset == 0.0 ? ScalarFunction::identity() : ScalarFunction::shift(offset);
  return primitive(Proto::Dot, f).labeled(offset == 0.0 ? "dot" : "dot(c=" + fmt(offset) + ")");
}

KernelExpr cosine(VectorXd c) {
  return primitive(Proto::LinearFunctional, ScalarFunction::cosine(), std::move(c)).labeled("cosine");
}

KernelExpr exp_dot() { return primitive(Proto::Dot, ScalarFunction::exponential(1.0)).labeled("expdot"); }

KernelExpr neural_network() {
  auto normalized = vertical_scale(ScalarFunction::inv_sqrt_1p(), primitive(Proto::Dot, ScalarFunction::identity()));
  return chain(ScalarFunction::arcsin(), normalized).labeled("nn");
}

KernelExpr rbf_network() { return vertical_scale(ScalarFunction::exponential(-1.0), rbf()).labeled("rbfnet"); }

KernelExpr spectral_mixture(std::vector<double> weights, std::vector<double> lengthscales,
                            std::vector<VectorXd> frequencies) {
  if (weights.size() != lengthscales.size() || weights.size() != frequencies.size() || weights.empty()) {
    throw DimensionMismatch("spectral mixture parameter lists must have equal nonzero length");
  }
  std::vector<KernelExpr> components;
  for (std::size_t q = 0; q < weights.size(); ++q) {
    const double ell = lengthscales[q];
    auto decay = primitive(Proto::SquaredDistance, ScalarFunction::exponential(-0.5 / (ell * ell)));
    auto wave = primitive(Proto::LinearFunctional, ScalarFunction::cosine(), 2.0 * std::numbers::pi * frequencies[q]);
    components.push_back(scale(weights[q], product({decay, wave})));
  }
  return sum(std::move(components)).labeled("sm(q=" + std::to_string(weights.size()) + ")");
}

KernelExpr quadratic_mixture(double c) {
  return sum({matern52(), primitive(Proto::Dot, ScalarFunction::power(2.0, c))}).labeled("qmix(c=" + fmt(c) + ")");
}

KernelExpr ard(VectorXd lengthscales, KernelExpr inner) {
  if ((lengthscales.array() <= 0.0).any()) throw DomainError("ARD length-scales must be positive");
  std::string label = "ard(" + inner.to_string() + ")";
  return warp(WarpMap::diagonal(lengthscales.cwiseInverse()), std::move(inner)).labeled(label);
}

KernelExpr linear_warp(MatrixXd U, KernelExpr inner) {
  std::string label = "lwarp(r=" + std::to_string(U.rows()) + ", " + inner.to_string() + ")";
  return warp(WarpMap::linear(std::move(U)), std::move(inner)).labeled(label);
}

// -- traits ------------------------------------------------------------------

InputTrait input_trait(const KernelExpr& k) {
  const KernelNode& n = k.node();
  switch (n.kind) {
    case KernelNode::Kind::Primitive: {
      InputTrait t;
      switch (n.proto) {
        case Proto::SquaredDistance: t.kind = InputTrait::Kind::Isotropic; break;
        case Proto::Dot: t.kind = InputTrait::Kind::DotProduct; break;
        case Proto::LinearFunctional:
          t.kind = InputTrait::Kind::StationaryLinearFunctional;
          t.c = n.c;
          break;
      }
      return t;
    }
    case KernelNode::Kind::Scale:
    case KernelNode::Kind::Chain:
      return input_trait(n.children[0]);
    case KernelNode::Kind::Sum:
    case KernelNode::Kind::Product: {
      InputTrait first = input_trait(n.children[0]);
      if (first.is_generic()) return first;
      for (std::size_t i = 1; i < n.children.size(); ++i) {
        if (!(input_trait(n.children[i]) == first)) return InputTrait{};
      }
      return first;
    }
    default:
      return InputTrait{};
  }
}

std::optional<Taylor4> homogeneous_profile(const KernelExpr& k, double s, int order) {
  const KernelNode& n = k.node();
  switch (n.kind) {
    case KernelNode::Kind::Primitive:
      return n.f.apply(Taylor4::variable(s), order);
    case KernelNode::Kind::Scale: {
      auto t = homogeneous_profile(n.children[0], s, order);
      if (!t) return std::nullopt;
      return n.scale * *t;
    }
    case KernelNode::Kind::Chain: {
      auto t = homogeneous_profile(n.children[0], s, order);
      if (!t) return std::nullopt;
      return n.f.apply(*t, order);
    }
    case KernelNode::Kind::Sum:
    case KernelNode::Kind::Product: {
      const bool is_sum = n.kind == KernelNode::Kind::Sum;
      Taylor4 acc = Taylor4::constant(is_sum ? 0.0 : 1.0);
      for (const auto& ch : n.children) {
        auto t = homogeneous_profile(ch, s, order);
        if (!t) return std::nullopt;
        acc = is_sum ? acc + *t : acc * *t;
      }
      return acc;
    }
    default:
      return std::nullopt;
  }
}

double proto_value(Proto p, const VectorXd& c, std::span<const double> x, std::span<const double> y) {
  KernelNode n;
  n.proto = p;
  n.c = c;
  return detail::proto_value<double>(n, x, y);
}

namespace detail {

void check_dims(const KernelExpr& k, std::size_t dx, std::size_t dy) {
  if (dx != dy) throw DimensionMismatch("x and y have different dimensions");
  if (k.input_dim() >= 0 && static_cast<std::size_t>(k.input_dim()) != dx) {
    throw DimensionMismatch("input dimension " + std::to_string(dx) + " does not match kernel dimension " +
                            std::to_string(k.input_dim()));
  }
}

}  // namespace detail

double evaluate(const KernelExpr& k, const VectorXd& x, const VectorXd& y) {
  return evaluate<double>(k, std::span<const double>(x.data(), x.size()), std::span<const double>(y.data(), y.size()));
}

MatrixXd gram(const KernelExpr& k, const MatrixXd& X) {
  const Index n = X.cols();
  MatrixXd K(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) K(i, j) = evaluate(k, VectorXd(X.col(i)), VectorXd(X.col(j)));
  }
  return K;
}

}  // namespace gradkernel
