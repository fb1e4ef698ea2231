#include "gradkernel/taylor.hpp"

#include <cmath>
#include <sstream>

#include "gradkernel/errors.hpp"

namespace gradkernel {

Taylor4 operator+(const Taylor4& a, const Taylor4& b) {
  Taylor4 r;
  for (int k = 0; k < 5; ++k) r.c[k] = a.c[k] + b.c[k];
  return r;
}

Taylor4 operator-(const Taylor4& a, const Taylor4& b) {
  Taylor4 r;
  for (int k = 0; k < 5; ++k) r.c[k] = a.c[k] - b.c[k];
  return r;
}

Taylor4 operator*(double s, const Taylor4& a) {
  Taylor4 r;
  for (int k = 0; k < 5; ++k) r.c[k] = s * a.c[k];
  return r;
}

Taylor4 operator*(const Taylor4& a, const Taylor4& b) {
  // Leibniz rule
  static constexpr double binom[5][5] = {
      {1, 0, 0, 0, 0}, {1, 1, 0, 0, 0}, {1, 2, 1, 0, 0}, {1, 3, 3, 1, 0}, {1, 4, 6, 4, 1}};
  Taylor4 r;
  for (int n = 0; n < 5; ++n) {
    double s = 0.0;
    for (int k = 0; k <= n; ++k) s += binom[n][k] * a.c[k] * b.c[n - k];
    r.c[n] = s;
  }
  return r;
}

Taylor4 compose(const std::array<double, 5>& f, const Taylor4& g) {
  const double g1 = g.c[1], g2 = g.c[2], g3 = g.c[3], g4 = g.c[4];
  Taylor4 h;
  h.c[0] = f[0];
  h.c[1] = f[1] * g1;
  h.c[2] = f[2] * g1 * g1 + f[1] * g2;
  h.c[3] = f[3] * g1 * g1 * g1 + 3.0 * f[2] * g1 * g2 + f[1] * g3;
  h.c[4] = f[4] * g1 * g1 * g1 * g1 + 6.0 * f[3] * g1 * g1 * g2 + f[2] * (3.0 * g2 * g2 + 4.0 * g1 * g3) +
           f[1] * g4;
  return h;
}

Taylor4 exp(const Taylor4& a) { return ScalarFunction::exponential().apply(a); }
Taylor4 cos(const Taylor4& a) { return ScalarFunction::cosine().apply(a); }
Taylor4 asin(const Taylor4& a) { return ScalarFunction::arcsin().apply(a); }
Taylor4 pow(const Taylor4& a, double p) { return ScalarFunction::power(p).apply(a); }
Taylor4 rsqrt(const Taylor4& a) { return ScalarFunction::power(-0.5).apply(a); }

namespace {

bool is_nonnegative_integer(double p) { return p >= 0.0 && std::floor(p) == p; }

// u^p and its derivatives scaled by du/ds = rate.
std::array<double, 5> power_chain(double u, double p, double rate, int order) {
  std::array<double, 5> d{};
  double falling = 1.0;
  double rk = 1.0;
  for (int k = 0; k <= order; ++k) {
    if (is_nonnegative_integer(p) && k > p) {
      d[k] = 0.0;
    } else {
      d[k] = falling * rk * std::pow(u, p - k);
    }
    falling *= (p - k);
    rk *= rate;
  }
  return d;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

ScalarFunction ScalarFunction::rational_quadratic(double alpha) {
  if (!(alpha > 0.0)) throw DomainError("rational quadratic requires alpha > 0");
  return ScalarFunction(Kind::RationalQuad, alpha);
}

ScalarFunction ScalarFunction::compose(const ScalarFunction& outer, const ScalarFunction& inner) {
  if (inner.kind_ == Kind::Identity) return outer;
  if (outer.kind_ == Kind::Identity) return inner;
  ScalarFunction f(Kind::Composed);
  f.outer_ = std::make_shared<const ScalarFunction>(outer);
  f.inner_ = std::make_shared<const ScalarFunction>(inner);
  return f;
}

std::string ScalarFunction::name() const {
  switch (kind_) {
    case Kind::Identity: return "identity";
    case Kind::Shift: return "shift(" + fmt(a_) + ")";
    case Kind::Exp: return "exp(" + fmt(a_) + "*s)";
    case Kind::RationalQuad: return "rq(" + fmt(a_) + ")";
    case Kind::Matern52: return "matern52";
    case Kind::Power: return "pow(s+" + fmt(b_) + "," + fmt(a_) + ")";
    case Kind::Cos: return "cos";
    case Kind::Arcsin: return "arcsin";
    case Kind::InvSqrt1p: return "invsqrt1p";
    case Kind::Composed: return outer_->name() + "∘" + inner_->name();
  }
  return "?";
}

double ScalarFunction::eval(double s) const { return derivs(s, 0)[0]; }

bool ScalarFunction::contains(Kind k) const {
  if (kind_ == k) return true;
  return kind_ == Kind::Composed && (outer_->contains(k) || inner_->contains(k));
}

int ScalarFunction::smooth_order(double s) const {
  switch (kind_) {
    case Kind::Matern52: return s > 0.0 ? 4 : 2;
    case Kind::Composed: return std::min(outer_->smooth_order(inner_->eval(s)), inner_->smooth_order(s));
    default: return 4;
  }
}

std::array<double, 5> ScalarFunction::derivs(double s, int order) const {
  if (order > 4) throw OrderError("derivatives above fourth order are not supported");
  std::array<double, 5> d{};
  switch (kind_) {
    case Kind::Identity:
      d[0] = s;
      d[1] = 1.0;
      break;
    case Kind::Shift:
      d[0] = s + a_;
      d[1] = 1.0;
      break;
    case Kind::Exp: {
      const double e = std::exp(a_ * s);
      double ak = 1.0;
      for (int k = 0; k <= 4; ++k, ak *= a_) d[k] = ak * e;
      break;
    }
    case Kind::RationalQuad: {
      const double u = 1.0 + s / (2.0 * a_);
      if (!(u > 0.0)) throw DomainError("rational quadratic: s must exceed -2*alpha");
      d = power_chain(u, -a_, 1.0 / (2.0 * a_), 4);
      break;
    }
    case Kind::Matern52: {
      if (s < 0.0) {
        if (s < -1e-12) throw DomainError("matern52: s must be nonnegative");
        s = 0.0;
      }
      const double t = std::sqrt(5.0 * s);
      const double e = std::exp(-t);
      d[0] = (1.0 + t + t * t / 3.0) * e;
      d[1] = -(5.0 / 6.0) * (1.0 + t) * e;
      d[2] = (25.0 / 12.0) * e;
      if (order >= 3) {
        if (t == 0.0) throw NonDifferentiable("matern52: third derivative is singular at s = 0");
        d[3] = -(125.0 / 24.0) * e / t;
        d[4] = (625.0 / 48.0) * e * (1.0 + t) / (t * t * t);
      }
      break;
    }
    case Kind::Power: {
      const double u = s + b_;
      if (!is_nonnegative_integer(a_) && !(u > 0.0)) throw DomainError("power: base must be positive");
      d = power_chain(u, a_, 1.0, 4);
      break;
    }
    case Kind::Cos: {
      const double c = std::cos(s), sn = std::sin(s);
      d = {c, -sn, -c, sn, c};
      break;
    }
    case Kind::Arcsin: {
      if (!(std::abs(s) < 1.0)) throw DomainError("arcsin: |s| must be below 1");
      const double q = 1.0 - s * s;
      const double rq = 1.0 / std::sqrt(q);
      d[0] = std::asin(s);
      d[1] = rq;
      d[2] = s * rq / q;
      d[3] = (1.0 + 2.0 * s * s) * rq / (q * q);
      d[4] = (9.0 * s + 6.0 * s * s * s) * rq / (q * q * q);
      break;
    }
    case Kind::InvSqrt1p: {
      const double u = 1.0 + s;
      if (!(u > 0.0)) throw DomainError("invsqrt1p: s must exceed -1");
      d = power_chain(u, -0.5, 1.0, 4);
      break;
    }
    case Kind::Composed: {
      const auto inner = inner_->derivs(s, order);
      const auto outer = outer_->derivs(inner[0], order);
      d = gradkernel::compose(outer, Taylor4{inner}).c;
      break;
    }
  }
  for (int k = order + 1; k <= 4; ++k) d[k] = 0.0;
  return d;
}

Taylor4 ScalarFunction::apply(const Taylor4& t, int order) const {
  return gradkernel::compose(derivs(t.c[0], order), t);
}

std::array<double, 5> eval_derivs(const ScalarFunction& f, double s, int order) {
  if (order < 1 || order > 4) throw OrderError("order must lie in 1..4");
  return f.derivs(s, order);
}

}  // namespace gradkernel
