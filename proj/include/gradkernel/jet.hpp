#pragma once

// Truncated multivariate jets with K independent nilpotent infinitesimals
// (ε_i² = 0). A Jet<2> seeded with ε₀ on x_i and ε₁ on y_j carries
// ∂²k/∂x_i∂y_j in its ε₀ε₁ coefficient; Jet<4> reaches the fourth-order mixed
// partials needed by the Hessian-Hessian blocks. This is nested first-order
// forward mode and backs every dense fallback.

#include <array>
#include <cstddef>
#include <type_traits>

#include <Eigen/Core>

#include "gradkernel/taylor.hpp"

namespace gradkernel {

template <int K>
struct Jet {
  static_assert(K >= 0 && K <= 4);
  static constexpr int size = 1 << K;
  std::array<double, size> c{};

  Jet() = default;
  Jet(double v) { c[0] = v; }  // NOLINT(google-explicit-constructor): constants lift implicitly

  static Jet seeded(double v, int direction) {
    Jet j(v);
    j.c[std::size_t{1} << direction] = 1.0;
    return j;
  }

  double value() const { return c[0]; }
  /// Coefficient of the product of the infinitesimals in `mask`.
  double part(unsigned mask) const { return c[mask]; }

  Jet& operator+=(const Jet& o) {
    for (int i = 0; i < size; ++i) c[i] += o.c[i];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    for (int i = 0; i < size; ++i) c[i] -= o.c[i];
    return *this;
  }
  Jet& operator*=(double s) {
    for (int i = 0; i < size; ++i) c[i] *= s;
    return *this;
  }
};

template <int K>
Jet<K> operator+(Jet<K> a, const Jet<K>& b) { return a += b; }
template <int K>
Jet<K> operator-(Jet<K> a, const Jet<K>& b) { return a -= b; }
template <int K>
Jet<K> operator-(Jet<K> a) { return a *= -1.0; }
template <int K>
Jet<K> operator*(Jet<K> a, double s) { return a *= s; }
template <int K>
Jet<K> operator*(double s, Jet<K> a) { return a *= s; }

template <int K>
Jet<K> operator*(const Jet<K>& a, const Jet<K>& b) {
  Jet<K> r;
  for (unsigned s = 0; s < static_cast<unsigned>(Jet<K>::size); ++s) {
    // sum over submasks t of s
    double acc = 0.0;
    for (unsigned t = s;; t = (t - 1) & s) {
      acc += a.c[t] * b.c[s ^ t];
      if (t == 0) break;
    }
    r.c[s] = acc;
  }
  return r;
}

/// f(a + δ) = Σₙ f⁽ⁿ⁾(a) δⁿ / n!, exact because δ^(K+1) = 0.
template <int K>
Jet<K> apply(const ScalarFunction& f, const Jet<K>& x) {
  const auto d = f.derivs(x.c[0], K);
  Jet<K> delta = x;
  delta.c[0] = 0.0;
  Jet<K> result(d[0]);
  Jet<K> power(1.0);
  double factorial = 1.0;
  for (int n = 1; n <= K; ++n) {
    power = power * delta;
    factorial *= n;
    result += power * (d[n] / factorial);
  }
  return result;
}

inline double apply(const ScalarFunction& f, double x) { return f.eval(x); }

/// Second-order dual with one scalar infinitesimal s on a coordinate of x and
/// a vector of infinitesimals t on all of y: one evaluation yields a full row
/// ∂²k/∂x_i∂yᵀ in `m`. Empty vectors stand for zero tangents.
struct ColumnJet {
  double v = 0.0;
  double s = 0.0;
  Eigen::VectorXd t;
  Eigen::VectorXd m;

  ColumnJet() = default;
  ColumnJet(double value) : v(value) {}  // NOLINT(google-explicit-constructor)

  static void axpy(Eigen::VectorXd& a, double c, const Eigen::VectorXd& b) {
    if (b.size() == 0 || c == 0.0) return;
    if (a.size() == 0)
      a = c * b;
    else
      a += c * b;
  }

  ColumnJet& operator+=(const ColumnJet& o) {
    v += o.v;
    s += o.s;
    axpy(t, 1.0, o.t);
    axpy(m, 1.0, o.m);
    return *this;
  }
  ColumnJet& operator-=(const ColumnJet& o) {
    v -= o.v;
    s -= o.s;
    axpy(t, -1.0, o.t);
    axpy(m, -1.0, o.m);
    return *this;
  }
  ColumnJet& operator*=(double c) {
    v *= c;
    s *= c;
    t *= c;
    m *= c;
    return *this;
  }
};

inline ColumnJet operator+(ColumnJet a, const ColumnJet& b) { return a += b; }
inline ColumnJet operator-(ColumnJet a, const ColumnJet& b) { return a -= b; }
inline ColumnJet operator-(ColumnJet a) { return a *= -1.0; }
inline ColumnJet operator*(ColumnJet a, double c) { return a *= c; }
inline ColumnJet operator*(double c, ColumnJet a) { return a *= c; }

inline ColumnJet operator*(const ColumnJet& a, const ColumnJet& b) {
  ColumnJet r(a.v * b.v);
  r.s = a.v * b.s + a.s * b.v;
  ColumnJet::axpy(r.t, a.v, b.t);
  ColumnJet::axpy(r.t, b.v, a.t);
  ColumnJet::axpy(r.m, a.v, b.m);
  ColumnJet::axpy(r.m, b.v, a.m);
  ColumnJet::axpy(r.m, a.s, b.t);
  ColumnJet::axpy(r.m, b.s, a.t);
  return r;
}

inline ColumnJet apply(const ScalarFunction& f, const ColumnJet& x) {
  const auto d = f.derivs(x.v, 2);
  ColumnJet r(d[0]);
  r.s = d[1] * x.s;
  ColumnJet::axpy(r.t, d[1], x.t);
  ColumnJet::axpy(r.m, d[1], x.m);
  ColumnJet::axpy(r.m, d[2] * x.s, x.t);
  return r;
}

template <class T>
struct is_jet : std::false_type {};
template <int K>
struct is_jet<Jet<K>> : std::true_type {};

}  // namespace gradkernel
