#include "gradkernel/hess_block.hpp"

#include <cmath>
#include <span>

#include "gradkernel/errors.hpp"
#include "gradkernel/jet.hpp"
#include "gradkernel/simd.hpp"

namespace gradkernel {

namespace {

using CMap = Eigen::Map<const MatrixXd>;

std::size_t sz(Index n) { return static_cast<std::size_t>(n); }

Index square_side(Index n) {
  const auto d = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n))));
  if (d * d != n) throw DimensionMismatch("vector length is not a perfect square");
  return d;
}

// out (d²) += c·vec(w aᵀ + a wᵀ)
void sym_outer_add(const double* w, const double* a, double* out, Index d, double c) {
  for (Index j = 0; j < d; ++j) {
    simd::axpy(c * a[j], w, out + d * j, sz(d));
    simd::axpy(c * w[j], a, out + d * j, sz(d));
  }
}

// z = (V + Vᵀ) b for V the d×d reshape of v
VectorXd sym_times(const double* v, const double* b, Index d) {
  VectorXd z = VectorXd::Zero(d);
  for (Index j = 0; j < d; ++j) {
    simd::axpy(b[j], v + d * j, z.data(), sz(d));
    z[j] += simd::dot(v + d * j, b, sz(d));
  }
  return z;
}

// Applies the block to every column of M.
MatrixXd apply_columns(const GradientBlock& G, const MatrixXd& M) {
  MatrixXd A = MatrixXd::Zero(G.dim(), M.cols());
  for (Index c = 0; c < M.cols(); ++c) G.apply_add(M.col(c).data(), A.col(c).data());
  return A;
}

// vec(J V Jᵀ), J of shape r×d, V d×d
VectorXd kron_apply(const Jacobian& J, const double* v, Index d) {
  const Index r = J.rows();
  MatrixXd A(r, d);  // J V
  for (Index c = 0; c < d; ++c) J.apply(v + d * c, A.col(c).data());
  const MatrixXd At = A.transpose();
  MatrixXd B(r, r);  // J Aᵀ = (J V Jᵀ)ᵀ
  for (Index c = 0; c < r; ++c) J.apply(At.col(c).data(), B.col(c).data());
  MatrixXd out = B.transpose();
  return Eigen::Map<VectorXd>(out.data(), r * r);
}

// out (d²) += c·vec(Jᵀ W J), W r×r
void kron_apply_transpose_add(const Jacobian& J, const double* w, double* out, double c) {
  const Index r = J.rows();
  const Index d = J.cols();
  MatrixXd A = MatrixXd::Zero(d, r);  // Jᵀ W
  for (Index col = 0; col < r; ++col) J.apply_transpose_add(w + r * col, A.col(col).data(), 1.0);
  const MatrixXd At = A.transpose();
  MatrixXd B = MatrixXd::Zero(d, d);  // Jᵀ Aᵀ = (Jᵀ W J)ᵀ
  for (Index col = 0; col < d; ++col) J.apply_transpose_add(At.col(col).data(), B.col(col).data(), 1.0);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) out[i + d * j] += c * B(j, i);
  simd::count(sz(d * d));
}

// out += c·W C Rᵀ v
void low_rank_add(const MatrixXd& W, const MatrixXd& C, const MatrixXd& R, const double* v, double* out, double c) {
  VectorXd t(R.cols());
  for (Index q = 0; q < R.cols(); ++q) t[q] = simd::dot(R.col(q).data(), v, sz(R.rows()));
  const VectorXd s = C * t;
  simd::count(sz(C.size()));
  for (Index p = 0; p < W.cols(); ++p) simd::axpy(c * s[p], W.col(p).data(), out, sz(W.rows()));
}

void dense_add(const MatrixXd& M, const double* v, double* out, double c) {
  for (Index j = 0; j < M.cols(); ++j) simd::axpy(c * v[j], M.col(j).data(), out, sz(M.rows()));
}

void dense_transpose_add(const MatrixXd& M, const double* u, double* out, double c) {
  for (Index j = 0; j < M.cols(); ++j) out[j] += c * simd::dot(M.col(j).data(), u, sz(M.rows()));
}

std::size_t jac_storage(const Jacobian& J) { return sz(J.is_diagonal() ? J.rows() : J.rows() * J.cols()); }

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

// -- free operations -------------------------------------------------------------

VectorXd shuffle_apply(const VectorXd& v) {
  const Index d = square_side(v.size());
  VectorXd out(v.size());
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) out[j + d * i] = v[i + d * j];
  return out;
}

VectorXd kron_sum_rank1_apply(const VectorXd& a, const VectorXd& b, const VectorXd& v) {
  require_dim(a.size() == b.size(), "Kronecker sum factors differ in length");
  const Index d = a.size();
  require_dim(v.size() == d * d, "Kronecker sum operand must have length d²");
  // vec(H aaᵀ) + vec(bbᵀ H) = vec((Ha) aᵀ) + vec(b (Hᵀb)ᵀ)
  VectorXd Ha = VectorXd::Zero(d), Htb(d);
  for (Index j = 0; j < d; ++j) {
    simd::axpy(a[j], v.data() + d * j, Ha.data(), sz(d));
    Htb[j] = simd::dot(v.data() + d * j, b.data(), sz(d));
  }
  VectorXd out = VectorXd::Zero(d * d);
  for (Index j = 0; j < d; ++j) {
    simd::axpy(a[j], Ha.data(), out.data() + d * j, sz(d));
    simd::axpy(Htb[j], b.data(), out.data() + d * j, sz(d));
  }
  return out;
}

VectorXd warp_kron_apply(const MatrixXd& U, const VectorXd& v) {
  const Index d = U.cols();
  require_dim(v.size() == d * d, "warp operand must have length d² for U of shape r×d");
  return kron_apply(Jacobian::dense(U), v.data(), d);
}

// -- HessGradBlock ---------------------------------------------------------------

void HessGradBlock::add_low_rank(MatrixXd W, MatrixXd C, MatrixXd R) {
  require_dim(W.rows() == dim_ * dim_ && R.rows() == dim_ && C.rows() == W.cols() && C.cols() == R.cols(),
              "low-rank Hessian-gradient factor shapes do not agree");
  if (W.cols() == 0 || R.cols() == 0) return;
  terms_.emplace_back(LowRank{std::move(W), std::move(C), std::move(R)});
}

void HessGradBlock::add_sym_outer(double coef, std::shared_ptr<const GradientBlock> G, VectorXd a) {
  require_dim(G->dim() == dim_ && a.size() == dim_, "symmetric outer term shapes do not agree");
  if (coef == 0.0) return;
  terms_.emplace_back(SymOuter{coef, std::move(G), std::move(a)});
}

void HessGradBlock::add_sandwich(double coef, std::shared_ptr<const Jacobian> jx,
                                 std::shared_ptr<const HessGradBlock> inner, std::shared_ptr<const Jacobian> jy) {
  require_dim(jx->rows() == inner->dim() && jy->rows() == inner->dim() && jx->cols() == dim_ && jy->cols() == dim_,
              "Hessian-gradient sandwich shapes do not agree");
  if (coef == 0.0) return;
  terms_.emplace_back(Sandwich{coef, std::move(jx), std::move(jy), std::move(inner)});
}

void HessGradBlock::add_dense(MatrixXd M) {
  require_dim(M.rows() == dim_ * dim_ && M.cols() == dim_, "dense Hessian-gradient block must be d²×d");
  terms_.emplace_back(Dense{std::move(M)});
}

bool HessGradBlock::has_dense() const {
  for (const auto& t : terms_) {
    if (std::holds_alternative<Dense>(t)) return true;
    if (const auto* s = std::get_if<Sandwich>(&t); s && s->inner->has_dense()) return true;
  }
  return false;
}

std::size_t HessGradBlock::storage() const {
  std::size_t s = 0;
  for (const auto& t : terms_) {
    s += std::visit(overloaded{
                        [](const LowRank& l) { return sz(l.W.size() + l.C.size() + l.R.size()); },
                        [](const SymOuter& o) { return 1 + o.G->storage() + sz(o.a.size()); },
                        [](const Sandwich& w) { return 1 + jac_storage(*w.jx) + jac_storage(*w.jy) + w.inner->storage(); },
                        [](const Dense& m) { return sz(m.M.size()); },
                    },
                    t);
  }
  return s;
}

HessGradBlock& HessGradBlock::operator+=(const HessGradBlock& o) {
  require_dim(o.dim_ == dim_, "Hessian-gradient block dimensions differ");
  terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
  return *this;
}

HessGradBlock& HessGradBlock::operator*=(double s) {
  for (auto& t : terms_) {
    std::visit(overloaded{
                   [s](LowRank& l) { l.C *= s; },
                   [s](SymOuter& o) { o.coef *= s; },
                   [s](Sandwich& w) { w.coef *= s; },
                   [s](Dense& m) { m.M *= s; },
               },
               t);
  }
  return *this;
}

void HessGradBlock::apply_add(const double* v, double* out, double coef) const {
  const Index d = dim_;
  for (const auto& t : terms_) {
    std::visit(overloaded{
                   [&](const LowRank& l) { low_rank_add(l.W, l.C, l.R, v, out, coef); },
                   [&](const SymOuter& o) {
                     VectorXd w = VectorXd::Zero(d);
                     o.G->apply_add(v, w.data());
                     sym_outer_add(w.data(), o.a.data(), out, d, coef * o.coef);
                   },
                   [&](const Sandwich& s) {
                     const Index r = s.inner->dim();
                     VectorXd u(r);
                     s.jy->apply(v, u.data());
                     VectorXd h = VectorXd::Zero(r * r);
                     s.inner->apply_add(u.data(), h.data());
                     kron_apply_transpose_add(*s.jx, h.data(), out, coef * s.coef);
                   },
                   [&](const Dense& m) { dense_add(m.M, v, out, coef); },
               },
               t);
  }
}

void HessGradBlock::apply_transpose_add(const double* u, double* out, double coef) const {
  const Index d = dim_;
  for (const auto& t : terms_) {
    std::visit(overloaded{
                   [&](const LowRank& l) {
                     VectorXd a(l.W.cols());
                     for (Index p = 0; p < l.W.cols(); ++p) a[p] = simd::dot(l.W.col(p).data(), u, sz(l.W.rows()));
                     const VectorXd b = l.C.transpose() * a;
                     simd::count(sz(l.C.size()));
                     for (Index q = 0; q < l.R.cols(); ++q) simd::axpy(coef * b[q], l.R.col(q).data(), out, sz(d));
                   },
                   [&](const SymOuter& o) {
                     // ⟨u, (I+S)vec(w aᵀ)⟩ = wᵀ (U + Uᵀ) a
                     const VectorXd z = sym_times(u, o.a.data(), d);
                     o.G->apply_transpose_add(z.data(), out, coef * o.coef);
                   },
                   [&](const Sandwich& s) {
                     const Index r = s.inner->dim();
                     const VectorXd h = kron_apply(*s.jx, u, d);
                     VectorXd w = VectorXd::Zero(r);
                     s.inner->apply_transpose_add(h.data(), w.data());
                     s.jy->apply_transpose_add(w.data(), out, coef * s.coef);
                   },
                   [&](const Dense& m) { dense_transpose_add(m.M, u, out, coef); },
               },
               t);
  }
}

VectorXd HessGradBlock::apply(const VectorXd& v) const {
  require_dim(v.size() == dim_, "Hessian-gradient operand must have length d");
  VectorXd out = VectorXd::Zero(dim_ * dim_);
  apply_add(v.data(), out.data());
  return out;
}

VectorXd HessGradBlock::apply_transpose(const VectorXd& u) const {
  require_dim(u.size() == dim_ * dim_, "Hessian-gradient transpose operand must have length d²");
  VectorXd out = VectorXd::Zero(dim_);
  apply_transpose_add(u.data(), out.data());
  return out;
}

// -- HessHessBlock ---------------------------------------------------------------

void HessHessBlock::add_low_rank(MatrixXd W, MatrixXd C, MatrixXd R) {
  require_dim(W.rows() == dim_ * dim_ && R.rows() == dim_ * dim_ && C.rows() == W.cols() && C.cols() == R.cols(),
              "low-rank Hessian-Hessian factor shapes do not agree");
  if (W.cols() == 0 || R.cols() == 0) return;
  terms_.emplace_back(LowRank{std::move(W), std::move(C), std::move(R)});
}

void HessHessBlock::add_shuffle_identity(double alpha, double beta) {
  if (alpha == 0.0 && beta == 0.0) return;
  terms_.emplace_back(ShuffleIdentity{alpha, beta});
}

void HessHessBlock::add_kron_sum(double coef, VectorXd a, VectorXd b) {
  require_dim(a.size() == dim_ && b.size() == dim_, "Kronecker sum factors must have length d");
  if (coef == 0.0) return;
  terms_.emplace_back(KronSum{coef, std::move(a), std::move(b)});
}

void HessHessBlock::add_sym_outer_vec(double coef, std::shared_ptr<const GradientBlock> G, VectorXd a, VectorXd b) {
  require_dim(G->dim() == dim_ && a.size() == dim_ && b.size() == dim_, "symmetric outer term shapes do not agree");
  if (coef == 0.0) return;
  terms_.emplace_back(SymOuterVec{coef, std::move(G), std::move(a), std::move(b)});
}

void HessHessBlock::add_sym_gg(double coef, std::shared_ptr<const GradientBlock> Gl,
                               std::shared_ptr<const GradientBlock> Gr) {
  require_dim(Gl->dim() == dim_ && Gr->dim() == dim_, "gradient block pair dimensions differ");
  if (coef == 0.0) return;
  terms_.emplace_back(SymGG{coef, std::move(Gl), std::move(Gr)});
}

void HessHessBlock::add_sym_outer_gh(double coef, std::shared_ptr<const HessGradBlock> H, VectorXd a) {
  require_dim(H->dim() == dim_ && a.size() == dim_, "gradient-Hessian outer term shapes do not agree");
  if (coef == 0.0 || H->term_count() == 0) return;
  terms_.emplace_back(SymOuterGH{coef, std::move(H), std::move(a)});
}

void HessHessBlock::add_contract(double coef, std::shared_ptr<const HessGradBlock> B, VectorXd b) {
  require_dim(B->dim() == dim_ && b.size() == dim_, "contraction term shapes do not agree");
  if (coef == 0.0 || B->term_count() == 0) return;
  terms_.emplace_back(Contract{coef, std::move(B), std::move(b)});
}

void HessHessBlock::add_sandwich(double coef, std::shared_ptr<const Jacobian> jx,
                                 std::shared_ptr<const HessHessBlock> inner, std::shared_ptr<const Jacobian> jy) {
  require_dim(jx->rows() == inner->dim() && jy->rows() == inner->dim() && jx->cols() == dim_ && jy->cols() == dim_,
              "Hessian-Hessian sandwich shapes do not agree");
  if (coef == 0.0) return;
  terms_.emplace_back(Sandwich{coef, std::move(jx), std::move(jy), std::move(inner)});
}

void HessHessBlock::add_dense(MatrixXd M) {
  require_dim(M.rows() == dim_ * dim_ && M.cols() == dim_ * dim_, "dense Hessian-Hessian block must be d²×d²");
  terms_.emplace_back(Dense{std::move(M)});
}

bool HessHessBlock::has_dense() const {
  for (const auto& t : terms_) {
    if (std::holds_alternative<Dense>(t)) return true;
    if (const auto* s = std::get_if<Sandwich>(&t); s && s->inner->has_dense()) return true;
  }
  return false;
}

std::size_t HessHessBlock::storage() const {
  std::size_t s = 0;
  for (const auto& t : terms_) {
    s += std::visit(overloaded{
                        [](const LowRank& l) { return sz(l.W.size() + l.C.size() + l.R.size()); },
                        [](const ShuffleIdentity&) { return std::size_t{2}; },
                        [](const KronSum& k) { return 1 + sz(k.a.size() + k.b.size()); },
                        [](const SymOuterVec& o) { return 1 + o.G->storage() + sz(o.a.size() + o.b.size()); },
                        [](const SymGG& g) { return 1 + g.Gl->storage() + g.Gr->storage(); },
                        [](const SymOuterGH& o) { return 1 + o.H->storage() + sz(o.a.size()); },
                        [](const Contract& c) { return 1 + c.B->storage() + sz(c.b.size()); },
                        [](const Sandwich& w) { return 1 + jac_storage(*w.jx) + jac_storage(*w.jy) + w.inner->storage(); },
                        [](const Dense& m) { return sz(m.M.size()); },
                    },
                    t);
  }
  return s;
}

HessHessBlock& HessHessBlock::operator+=(const HessHessBlock& o) {
  require_dim(o.dim_ == dim_, "Hessian-Hessian block dimensions differ");
  terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
  return *this;
}

HessHessBlock& HessHessBlock::operator*=(double s) {
  for (auto& t : terms_) {
    std::visit(overloaded{
                   [s](LowRank& l) { l.C *= s; },
                   [s](ShuffleIdentity& i) {
                     i.alpha *= s;
                     i.beta *= s;
                   },
                   [s](auto& term) {
                     if constexpr (requires { term.coef; }) {
                       term.coef *= s;
                     } else {
                       term.M *= s;
                     }
                   },
               },
               t);
  }
  return *this;
}

void HessHessBlock::apply_add(const double* v, double* out, double coef) const {
  const Index d = dim_;
  const Index n = d * d;
  for (const auto& t : terms_) {
    std::visit(overloaded{
                   [&](const LowRank& l) { low_rank_add(l.W, l.C, l.R, v, out, coef); },
                   [&](const ShuffleIdentity& s) {
                     for (Index j = 0; j < d; ++j)
                       for (Index i = 0; i < d; ++i)
                         out[i + d * j] += coef * (s.alpha * v[i + d * j] + s.beta * v[j + d * i]);
                     simd::count(sz(3 * n));
                   },
                   [&](const KronSum& k) {
                     // (aaᵀ ⊕ bbᵀ) vec(M) with M = V + Vᵀ symmetric: vec((Ma) aᵀ + b (Mb)ᵀ)
                     const VectorXd Ma = sym_times(v, k.a.data(), d);
                     const VectorXd Mb = sym_times(v, k.b.data(), d);
                     const double c = coef * k.coef;
                     for (Index j = 0; j < d; ++j) {
                       simd::axpy(c * k.a[j], Ma.data(), out + d * j, sz(d));
                       simd::axpy(c * Mb[j], k.b.data(), out + d * j, sz(d));
                     }
                   },
                   [&](const SymOuterVec& o) {
                     const VectorXd z = sym_times(v, o.b.data(), d);
                     VectorXd w = VectorXd::Zero(d);
                     o.G->apply_add(z.data(), w.data());
                     sym_outer_add(w.data(), o.a.data(), out, d, coef * o.coef);
                   },
                   [&](const SymGG& g) {
                     const CMap V(v, d, d);
                     const MatrixXd M = V + V.transpose();
                     const MatrixXd A = apply_columns(*g.Gr, M);                // Gr M = (M Grᵀ)ᵀ
                     const MatrixXd B = apply_columns(*g.Gl, A.transpose());    // Gl M Grᵀ
                     const double c = coef * g.coef;
                     for (Index j = 0; j < d; ++j)
                       for (Index i = 0; i < d; ++i) out[i + d * j] += c * (B(i, j) + B(j, i));
                     simd::count(sz(n));
                   },
                   [&](const SymOuterGH& o) {
                     VectorXd w = VectorXd::Zero(d);
                     o.H->apply_transpose_add(v, w.data());
                     sym_outer_add(w.data(), o.a.data(), out, d, coef * o.coef);
                   },
                   [&](const Contract& c) {
                     const VectorXd z = sym_times(v, c.b.data(), d);
                     c.B->apply_add(z.data(), out, coef * c.coef);
                   },
                   [&](const Sandwich& s) {
                     const Index r = s.inner->dim();
                     const VectorXd u = kron_apply(*s.jy, v, d);
                     VectorXd h = VectorXd::Zero(r * r);
                     s.inner->apply_add(u.data(), h.data());
                     kron_apply_transpose_add(*s.jx, h.data(), out, coef * s.coef);
                   },
                   [&](const Dense& m) { dense_add(m.M, v, out, coef); },
               },
               t);
  }
}

VectorXd HessHessBlock::apply(const VectorXd& v) const {
  require_dim(v.size() == dim_ * dim_, "Hessian-Hessian operand must have length d²");
  VectorXd out = VectorXd::Zero(dim_ * dim_);
  apply_add(v.data(), out.data());
  return out;
}

MatrixXd materialize(const HessGradBlock& block) {
  const Index d = block.dim();
  MatrixXd M(d * d, d);
  for (Index j = 0; j < d; ++j) M.col(j) = block.apply(VectorXd::Unit(d, j));
  return M;
}

MatrixXd materialize(const HessHessBlock& block) {
  const Index n = block.dim() * block.dim();
  MatrixXd M(n, n);
  for (Index j = 0; j < n; ++j) M.col(j) = block.apply(VectorXd::Unit(n, j));
  return M;
}

// -- dense fallback --------------------------------------------------------------

HessianResult dense_hessian_blocks(const KernelExpr& k, const VectorXd& x, const VectorXd& y) {
  detail::check_dims(k, x.size(), y.size());
  const Index d = x.size();
  using J4 = Jet<4>;
  std::vector<J4> jx(sz(d)), jy(sz(d));
  for (Index i = 0; i < d; ++i) {
    jx[sz(i)] = J4(x[i]);
    jy[sz(i)] = J4(y[i]);
  }
  MatrixXd G(d, d), HG(d * d, d), HGs(d * d, d), HH(d * d, d * d);
  VectorXd gx(d), gy(d), hx(d * d), hy(d * d);
  double value = evaluate(k, x, y);
  // ε₀ → xᵢ, ε₁ → xⱼ, ε₂ → yₗ, ε₃ → yₘ; symmetric in (i,j) and (l,m).
  for (Index i = 0; i < d; ++i) {
    for (Index j = i; j < d; ++j) {
      jx[sz(i)].c[1] += 1.0;
      jx[sz(j)].c[2] += 1.0;
      for (Index l = 0; l < d; ++l) {
        for (Index m = l; m < d; ++m) {
          jy[sz(l)].c[4] += 1.0;
          jy[sz(m)].c[8] += 1.0;
          const J4 v = evaluate<J4>(k, std::span<const J4>(jx), std::span<const J4>(jy));
          jy[sz(l)].c[4] -= 1.0;
          jy[sz(m)].c[8] -= 1.0;
          for (auto [a, b] : {std::pair{i, j}, std::pair{j, i}}) {
            for (auto [p, q] : {std::pair{l, m}, std::pair{m, l}}) {
              HH(a + d * b, p + d * q) = v.c[15];
            }
            HG(a + d * b, l) = v.c[7];
            HG(a + d * b, m) = v.c[11];
            hx[a + d * b] = v.c[3];
          }
          HGs(l + d * m, i) = v.c[13];
          HGs(m + d * l, i) = v.c[13];
          HGs(l + d * m, j) = v.c[14];
          HGs(m + d * l, j) = v.c[14];
          hy[l + d * m] = hy[m + d * l] = v.c[12];
          G(i, l) = v.c[5];
          G(i, m) = v.c[9];
          G(j, l) = v.c[6];
          G(j, m) = v.c[10];
          gx[i] = v.c[1];
          gx[j] = v.c[2];
          gy[l] = v.c[4];
          gy[m] = v.c[8];
        }
      }
      jx[sz(i)].c[1] -= 1.0;
      jx[sz(j)].c[2] -= 1.0;
    }
  }
  HessianResult r;
  r.value = value;
  r.gx = gx;
  r.gy = gy;
  r.G = GradientBlock::dense(std::move(G));
  r.hx = hx;
  r.hy = hy;
  r.hg = HessGradBlock(d);
  r.hg.add_dense(std::move(HG));
  r.hgs = HessGradBlock(d);
  r.hgs.add_dense(std::move(HGs));
  r.hh = HessHessBlock(d);
  r.hh.add_dense(std::move(HH));
  return r;
}

// -- structured rules ------------------------------------------------------------

namespace {

VectorXd vec_outer(const VectorXd& a, const VectorXd& b) {
  const Index d = a.size();
  VectorXd v(d * d);
  for (Index j = 0; j < d; ++j) v.segment(d * j, d) = b[j] * a;
  return v;
}

VectorXd vec_identity(Index d) {
  VectorXd v = VectorXd::Zero(d * d);
  for (Index i = 0; i < d; ++i) v[i + d * i] = 1.0;
  return v;
}

MatrixXd cols(std::initializer_list<const VectorXd*> vs) {
  MatrixXd M((*vs.begin())->size(), static_cast<Index>(vs.size()));
  Index c = 0;
  for (const VectorXd* v : vs) M.col(c++) = *v;
  return M;
}

MatrixXd coefs(Index r, Index c, std::initializer_list<double> vals) {
  MatrixXd M(r, c);
  auto it = vals.begin();
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) M(i, j) = *it++;
  return M;
}

template <class T>
std::shared_ptr<const T> share(T v) {
  return std::make_shared<const T>(std::move(v));
}

HessianResult empty_result(Index d) {
  HessianResult r;
  r.gx = VectorXd::Zero(d);
  r.gy = VectorXd::Zero(d);
  r.G = GradientBlock(d);
  r.hx = VectorXd::Zero(d * d);
  r.hy = VectorXd::Zero(d * d);
  r.hg = HessGradBlock(d);
  r.hgs = HessGradBlock(d);
  r.hh = HessHessBlock(d);
  return r;
}

// k = f(r·r), r = x - y
HessianResult isotropic(const Taylor4& t, const VectorXd& x, const VectorXd& y) {
  const Index d = x.size();
  const VectorXd r = x - y;
  const VectorXd vI = vec_identity(d);
  const VectorXd vrr = vec_outer(r, r);
  HessianResult res = empty_result(d);
  res.value = t[0];
  res.gx = 2.0 * t[1] * r;
  res.gy = -res.gx;
  res.G.add_identity(-2.0 * t[1]);
  res.G.add_rank_one(-4.0 * t[2], r, r);
  res.hx = 4.0 * t[2] * vrr + 2.0 * t[1] * vI;
  res.hy = res.hx;
  const auto I = share(GradientBlock::scaled_identity(d, 1.0));
  res.hg.add_low_rank(cols({&vrr, &vI}), coefs(2, 1, {-8.0 * t[3], -4.0 * t[2]}), r);
  res.hg.add_sym_outer(-4.0 * t[2], I, r);
  res.hgs.add_low_rank(cols({&vrr, &vI}), coefs(2, 1, {8.0 * t[3], 4.0 * t[2]}), r);
  res.hgs.add_sym_outer(4.0 * t[2], I, r);
  const MatrixXd W = cols({&vI, &vrr});
  res.hh.add_low_rank(W, coefs(2, 2, {4.0 * t[2], 8.0 * t[3], 8.0 * t[3], 16.0 * t[4]}), W);
  res.hh.add_kron_sum(8.0 * t[3], r, r);
  res.hh.add_shuffle_identity(4.0 * t[2], 4.0 * t[2]);
  return res;
}

// k = f(x·y)
HessianResult dot_product(const Taylor4& t, const VectorXd& x, const VectorXd& y) {
  const Index d = x.size();
  const VectorXd vyy = vec_outer(y, y);
  const VectorXd vxx = vec_outer(x, x);
  HessianResult res = empty_result(d);
  res.value = t[0];
  res.gx = t[1] * y;
  res.gy = t[1] * x;
  res.G.add_identity(t[1]);
  res.G.add_rank_one(t[2], y, x);
  res.hx = t[2] * vyy;
  res.hy = t[2] * vxx;
  const auto I = share(GradientBlock::scaled_identity(d, 1.0));
  res.hg.add_low_rank(vyy, coefs(1, 1, {t[3]}), x);
  res.hg.add_sym_outer(t[2], I, y);
  res.hgs.add_low_rank(vxx, coefs(1, 1, {t[3]}), y);
  res.hgs.add_sym_outer(t[2], I, x);
  res.hh.add_low_rank(vyy, coefs(1, 1, {t[4]}), vxx);
  res.hh.add_sym_outer_vec(t[3], I, y, x);
  res.hh.add_shuffle_identity(t[2], t[2]);
  return res;
}

// k = f(c·r)
HessianResult linear_functional(const Taylor4& t, const VectorXd& c, Index d) {
  const VectorXd vcc = vec_outer(c, c);
  HessianResult res = empty_result(d);
  res.value = t[0];
  res.gx = t[1] * c;
  res.gy = -res.gx;
  res.G.add_rank_one(-t[2], c, c);
  res.hx = t[2] * vcc;
  res.hy = res.hx;
  res.hg.add_low_rank(vcc, coefs(1, 1, {-t[3]}), c);
  res.hgs.add_low_rank(vcc, coefs(1, 1, {t[3]}), c);
  res.hh.add_low_rank(vcc, coefs(1, 1, {t[4]}), vcc);
  return res;
}

// k = f(g)
HessianResult chain_rule(const std::array<double, 5>& f, const HessianResult& g) {
  const Index d = g.gx.size();
  const VectorXd& a = g.gx;
  const VectorXd& b = g.gy;
  const VectorXd vaa = vec_outer(a, a);
  const VectorXd vbb = vec_outer(b, b);
  const auto G = share(g.G);
  HessianResult res = empty_result(d);
  res.value = f[0];
  res.gx = f[1] * a;
  res.gy = f[1] * b;
  res.G = f[1] * g.G;
  res.G.add_rank_one(f[2], a, b);
  res.hx = f[2] * vaa + f[1] * g.hx;
  res.hy = f[2] * vbb + f[1] * g.hy;

  res.hg.add_low_rank(cols({&vaa, &g.hx}), coefs(2, 1, {f[3], f[2]}), b);
  res.hg.add_sym_outer(f[2], G, a);
  if (f[1] != 0.0) res.hg += f[1] * HessGradBlock(g.hg);

  res.hgs.add_low_rank(cols({&vbb, &g.hy}), coefs(2, 1, {f[3], f[2]}), a);
  res.hgs.add_sym_outer(f[2], share(g.G.transposed()), b);
  if (f[1] != 0.0) res.hgs += f[1] * HessGradBlock(g.hgs);

  res.hh.add_low_rank(cols({&g.hx, &vaa}), coefs(2, 2, {f[2], f[3], f[3], f[4]}), cols({&g.hy, &vbb}));
  res.hh.add_sym_outer_vec(f[3], G, a, b);
  res.hh.add_sym_gg(0.5 * f[2], G, G);
  res.hh.add_sym_outer_gh(f[2], share(g.hgs), a);
  res.hh.add_contract(f[2], share(g.hg), b);
  if (f[1] != 0.0) res.hh += f[1] * HessHessBlock(g.hh);
  return res;
}

// k = u·w
HessianResult product_rule(const HessianResult& u, const HessianResult& w) {
  const Index d = u.gx.size();
  const double uv = u.value, wv = w.value;
  HessianResult res = empty_result(d);
  res.value = uv * wv;
  res.gx = wv * u.gx + uv * w.gx;
  res.gy = wv * u.gy + uv * w.gy;
  res.G = wv * u.G;
  res.G += uv * w.G;
  res.G.add_rank_one(1.0, u.gx, w.gy);
  res.G.add_rank_one(1.0, w.gx, u.gy);
  res.hx = wv * u.hx + uv * w.hx + vec_outer(u.gx, w.gx) + vec_outer(w.gx, u.gx);
  res.hy = wv * u.hy + uv * w.hy + vec_outer(u.gy, w.gy) + vec_outer(w.gy, u.gy);

  const auto Gu = share(u.G), Gw = share(w.G);
  const MatrixXd I2 = MatrixXd::Identity(2, 2);
  res.hg = wv * HessGradBlock(u.hg);
  res.hg += uv * HessGradBlock(w.hg);
  res.hg.add_low_rank(cols({&u.hx, &w.hx}), I2, cols({&w.gy, &u.gy}));
  res.hg.add_sym_outer(1.0, Gu, w.gx);
  res.hg.add_sym_outer(1.0, Gw, u.gx);

  res.hgs = wv * HessGradBlock(u.hgs);
  res.hgs += uv * HessGradBlock(w.hgs);
  res.hgs.add_low_rank(cols({&u.hy, &w.hy}), I2, cols({&w.gx, &u.gx}));
  res.hgs.add_sym_outer(1.0, share(u.G.transposed()), w.gy);
  res.hgs.add_sym_outer(1.0, share(w.G.transposed()), u.gy);

  res.hh = wv * HessHessBlock(u.hh);
  res.hh += uv * HessHessBlock(w.hh);
  res.hh.add_contract(1.0, share(u.hg), w.gy);
  res.hh.add_contract(1.0, share(w.hg), u.gy);
  res.hh.add_low_rank(cols({&u.hx, &w.hx}), coefs(2, 2, {0.0, 1.0, 1.0, 0.0}), cols({&u.hy, &w.hy}));
  res.hh.add_sym_outer_gh(1.0, share(u.hgs), w.gx);
  res.hh.add_sym_outer_gh(1.0, share(w.hgs), u.gx);
  res.hh.add_sym_gg(1.0, Gu, Gw);
  return res;
}

// u = F(x)·E(y) with F = φ(x·x), E = φ(y·y)
HessianResult separable_scale(const ScalarFunction& phi, const VectorXd& x, const VectorXd& y) {
  const Index d = x.size();
  const auto px = phi.derivs(x.squaredNorm(), 2);
  const auto py = phi.derivs(y.squaredNorm(), 2);
  const double F = px[0], E = py[0];
  const VectorXd dF = 2.0 * px[1] * x;
  const VectorXd dE = 2.0 * py[1] * y;
  const VectorXd vI = vec_identity(d);
  const VectorXd HF = 2.0 * px[1] * vI + 4.0 * px[2] * vec_outer(x, x);
  const VectorXd HE = 2.0 * py[1] * vI + 4.0 * py[2] * vec_outer(y, y);
  const MatrixXd one = MatrixXd::Ones(1, 1);
  HessianResult u = empty_result(d);
  u.value = F * E;
  u.gx = E * dF;
  u.gy = F * dE;
  u.G.add_rank_one(1.0, dF, dE);
  u.hx = E * HF;
  u.hy = F * HE;
  u.hg.add_low_rank(HF, one, dE);
  u.hgs.add_low_rank(HE, one, dF);
  u.hh.add_low_rank(HF, one, HE);
  return u;
}

HessianResult warp_rule(const WarpMap& map, const HessianResult& h, Index d) {
  const bool diag = map.kind() == WarpMap::Kind::Diagonal;
  const auto J = share(diag ? Jacobian::diagonal(map.scales()) : Jacobian::dense(map.matrix()));
  HessianResult res = empty_result(d);
  res.value = h.value;
  J->apply_transpose_add(h.gx.data(), res.gx.data(), 1.0);
  J->apply_transpose_add(h.gy.data(), res.gy.data(), 1.0);
  res.G = GradientBlock::sandwich(*J, h.G, *J);
  kron_apply_transpose_add(*J, h.hx.data(), res.hx.data(), 1.0);
  kron_apply_transpose_add(*J, h.hy.data(), res.hy.data(), 1.0);
  res.hg.add_sandwich(1.0, J, share(h.hg), J);
  res.hgs.add_sandwich(1.0, J, share(h.hgs), J);
  res.hh.add_sandwich(1.0, J, share(h.hh), J);
  return res;
}

void reject_matern(const KernelExpr& k) {
  const KernelNode& n = k.node();
  const bool uses_f = n.kind == KernelNode::Kind::Primitive || n.kind == KernelNode::Kind::Chain ||
                      n.kind == KernelNode::Kind::VerticalScale;
  if (uses_f && n.f.contains(ScalarFunction::Kind::Matern52)) {
    throw NonDifferentiable("Matérn-5/2 kernels support value and gradient observations only");
  }
  for (const auto& c : n.children) reject_matern(c);
}

HessianResult derive(const KernelExpr& k, const VectorXd& x, const VectorXd& y, const HessianOptions& opt) {
  const KernelNode& n = k.node();
  const Index d = x.size();
  const InputTrait trait = input_trait(k);
  switch (trait.kind) {
    case InputTrait::Kind::Isotropic:
      return isotropic(*homogeneous_profile(k, (x - y).squaredNorm(), 4), x, y);
    case InputTrait::Kind::DotProduct:
      return dot_product(*homogeneous_profile(k, x.dot(y), 4), x, y);
    case InputTrait::Kind::StationaryLinearFunctional:
      return linear_functional(*homogeneous_profile(k, trait.c.dot(x - y), 4), trait.c, d);
    case InputTrait::Kind::Generic:
      break;
  }
  switch (n.kind) {
    case KernelNode::Kind::Sum: {
      HessianResult res = empty_result(d);
      for (const auto& ch : n.children) {
        HessianResult c = derive(ch, x, y, opt);
        res.value += c.value;
        res.gx += c.gx;
        res.gy += c.gy;
        res.G += c.G;
        res.hx += c.hx;
        res.hy += c.hy;
        res.hg += c.hg;
        res.hgs += c.hgs;
        res.hh += c.hh;
      }
      return res;
    }
    case KernelNode::Kind::Scale: {
      HessianResult c = derive(n.children[0], x, y, opt);
      const double a = n.scale;
      c.value *= a;
      c.gx *= a;
      c.gy *= a;
      c.G *= a;
      c.hx *= a;
      c.hy *= a;
      c.hg *= a;
      c.hgs *= a;
      c.hh *= a;
      return c;
    }
    case KernelNode::Kind::Chain: {
      HessianResult g = derive(n.children[0], x, y, opt);
      if (n.f.smooth_order(g.value) < 4) throw NonDifferentiable("outer function is not C⁴ at the inner value");
      return chain_rule(n.f.derivs(g.value, 4), g);
    }
    case KernelNode::Kind::VerticalScale:
      return product_rule(separable_scale(n.f, x, y), derive(n.children[0], x, y, opt));
    case KernelNode::Kind::Warp:
      if (n.warp->is_linear()) {
        const VectorXd ux = n.warp->map(x), uy = n.warp->map(y);
        return warp_rule(*n.warp, derive(n.children[0], ux, uy, opt), d);
      }
      break;
    default:
      break;
  }
  if (d <= opt.dense_cap) return dense_hessian_blocks(k, x, y);
  throw UnsupportedNode("no structured Hessian rule for this node and d exceeds the dense fallback cap");
}

}  // namespace

HessianResult hessian_blocks(const KernelExpr& k, const VectorXd& x, const VectorXd& y, const HessianOptions& options) {
  detail::check_dims(k, x.size(), y.size());
  reject_matern(k);
  if (options.mode == HessianOptions::Mode::DenseFallback) return dense_hessian_blocks(k, x, y);
  return derive(k, x, y, options);
}

}  // namespace gradkernel
