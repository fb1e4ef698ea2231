#pragma once

#include <array>
#include <memory>
#include <string>

namespace gradkernel {

/// Value and first four derivatives of a scalar function at a point.
/// Stored as derivatives (not Taylor coefficients divided by factorials).
struct Taylor4 {
  std::array<double, 5> c{};

  static constexpr Taylor4 constant(double a) { return Taylor4{{a, 0.0, 0.0, 0.0, 0.0}}; }
  static constexpr Taylor4 variable(double s) { return Taylor4{{s, 1.0, 0.0, 0.0, 0.0}}; }

  double value() const { return c[0]; }
  double operator[](int k) const { return c[k]; }
};

Taylor4 operator+(const Taylor4& a, const Taylor4& b);
Taylor4 operator-(const Taylor4& a, const Taylor4& b);
Taylor4 operator*(const Taylor4& a, const Taylor4& b);
Taylor4 operator*(double s, const Taylor4& a);

/// Faà di Bruno: derivatives of f∘g given f⁽ᵏ⁾ at g(s) and the derivatives of g.
Taylor4 compose(const std::array<double, 5>& outer_derivs, const Taylor4& inner);

Taylor4 exp(const Taylor4& a);
Taylor4 cos(const Taylor4& a);
Taylor4 asin(const Taylor4& a);
Taylor4 pow(const Taylor4& a, double p);
Taylor4 rsqrt(const Taylor4& a);

/// Outer scalar functions of the kernel zoo. The parameterisations are
///   Identity      f(s) = s
///   Shift         f(s) = s + a
///   Exp           f(s) = exp(a·s)            (RBF uses a = -1/2)
///   RationalQuad  f(s) = (1 + s/(2a))^(-a)   (a = α > 0)
///   Matern52      f(s) = (1 + √(5s) + 5s/3)·exp(-√(5s))
///   Power         f(s) = (s + b)^a
///   Cos           f(s) = cos(s)
///   Arcsin        f(s) = asin(s)
///   InvSqrt1p     f(s) = (1 + s)^(-1/2)
///   Composed      f(s) = outer(inner(s))
class ScalarFunction {
 public:
  enum class Kind { Identity, Shift, Exp, RationalQuad, Matern52, Power, Cos, Arcsin, InvSqrt1p, Composed };

  static ScalarFunction identity() { return ScalarFunction(Kind::Identity); }
  static ScalarFunction shift(double c) { return ScalarFunction(Kind::Shift, c); }
  static ScalarFunction exponential(double rate = 1.0) { return ScalarFunction(Kind::Exp, rate); }
  static ScalarFunction rational_quadratic(double alpha);
  static ScalarFunction matern52() { return ScalarFunction(Kind::Matern52); }
  static ScalarFunction power(double p, double offset = 0.0) { return ScalarFunction(Kind::Power, p, offset); }
  static ScalarFunction cosine() { return ScalarFunction(Kind::Cos); }
  static ScalarFunction arcsin() { return ScalarFunction(Kind::Arcsin); }
  static ScalarFunction inv_sqrt_1p() { return ScalarFunction(Kind::InvSqrt1p); }
  static ScalarFunction compose(const ScalarFunction& outer, const ScalarFunction& inner);

  Kind kind() const { return kind_; }
  double a() const { return a_; }
  double b() const { return b_; }
  std::string name() const;

  double eval(double s) const;
  /// f(s), f'(s), …, f⁽ᵒʳᵈᵉʳ⁾(s); entries above `order` are zero.
  std::array<double, 5> derivs(double s, int order = 4) const;
  /// Pushes a Taylor4 through f (closed forms for named kinds).
  Taylor4 apply(const Taylor4& t, int order = 4) const;

  /// Highest order for which f is smooth at s (Matérn-5/2 loses f''' at s = 0).
  int smooth_order(double s) const;
  /// True if f is, or is composed from, a function of kind k.
  bool contains(Kind k) const;

 private:
  explicit ScalarFunction(Kind k, double a = 0.0, double b = 0.0) : kind_(k), a_(a), b_(b) {}

  Kind kind_;
  double a_;
  double b_;
  std::shared_ptr<const ScalarFunction> outer_;
  std::shared_ptr<const ScalarFunction> inner_;
};

/// (f(s), f'(s), …, f⁽ᵒʳᵈᵉʳ⁾(s)) for order in 1..4.
std::array<double, 5> eval_derivs(const ScalarFunction& f, double s, int order);

}  // namespace gradkernel
