#include "gradkernel/grad_block.hpp"

#include <cmath>

#include "gradkernel/simd.hpp"

namespace gradkernel {

// -- Jacobian ------------------------------------------------------------------

Jacobian Jacobian::dense(MatrixXd J) {
  Jacobian j;
  j.J_ = std::move(J);
  return j;
}

Jacobian Jacobian::diagonal(VectorXd s) {
  Jacobian j;
  j.diagonal_ = true;
  j.s_ = std::move(s);
  return j;
}

void Jacobian::apply(const double* x, double* out) const {
  if (diagonal_) {
    const Index d = s_.size();
    for (Index i = 0; i < d; ++i) out[i] = s_[i] * x[i];
    simd::count(static_cast<std::uint64_t>(d));
    return;
  }
  const Index r = J_.rows();
  const Index d = J_.cols();
  std::fill(out, out + r, 0.0);
  for (Index j = 0; j < d; ++j) simd::axpy(x[j], J_.col(j).data(), out, static_cast<std::size_t>(r));
}

void Jacobian::apply_transpose_add(const double* w, double* out, double coef) const {
  if (diagonal_) {
    const Index d = s_.size();
    for (Index i = 0; i < d; ++i) out[i] += coef * s_[i] * w[i];
    simd::count(static_cast<std::uint64_t>(2 * d));
    return;
  }
  const Index r = J_.rows();
  const Index d = J_.cols();
  for (Index j = 0; j < d; ++j) out[j] += coef * simd::dot(J_.col(j).data(), w, static_cast<std::size_t>(r));
  simd::count(static_cast<std::uint64_t>(d));
}

MatrixXd Jacobian::to_dense() const {
  if (diagonal_) return s_.asDiagonal();
  return J_;
}

// -- GradientBlock -------------------------------------------------------------

GradientBlock GradientBlock::scaled_identity(Index dim, double alpha) {
  GradientBlock b(dim);
  b.alpha_ = alpha;
  return b;
}

GradientBlock GradientBlock::diagonal(VectorXd diag) {
  GradientBlock b(diag.size());
  b.diag_ = std::move(diag);
  return b;
}

GradientBlock GradientBlock::low_rank(MatrixXd U, MatrixXd C, MatrixXd V) {
  GradientBlock b(U.rows());
  b.add_low_rank(U, C, V);
  return b;
}

GradientBlock GradientBlock::rank_one(double c, const VectorXd& u, const VectorXd& v) {
  GradientBlock b(u.size());
  b.add_rank_one(c, u, v);
  return b;
}

GradientBlock GradientBlock::sandwich(Jacobian jx, GradientBlock inner, Jacobian jy) {
  require_dim(jx.rows() == inner.dim() && jy.rows() == inner.dim() && jx.cols() == jy.cols(),
              "sandwich shapes do not agree");
  GradientBlock b(jx.cols());
  SandwichTerm t;
  t.jx = std::make_shared<const Jacobian>(std::move(jx));
  t.jy = std::make_shared<const Jacobian>(std::move(jy));
  t.inner = std::make_shared<const GradientBlock>(std::move(inner));
  b.sandwiches_.push_back(std::move(t));
  return b;
}

GradientBlock GradientBlock::dense(MatrixXd M) {
  require_dim(M.rows() == M.cols(), "dense gradient block must be square");
  GradientBlock b(M.rows());
  b.dense_ = std::move(M);
  return b;
}

bool GradientBlock::is_scaled_identity() const {
  return diag_.size() == 0 && U_.cols() == 0 && sandwiches_.empty() && dense_.size() == 0;
}

GradientBlock::Variant GradientBlock::variant() const {
  const bool has_id = alpha_ != 0.0;
  const bool has_diag = diag_.size() > 0;
  const bool has_lr = U_.cols() > 0;
  const bool has_sw = !sandwiches_.empty();
  const bool has_dense = dense_.size() > 0;
  if (!has_id && !has_diag && !has_lr && !has_sw && !has_dense) return Variant::Zero;
  if (has_dense) return (has_id || has_diag || has_lr || has_sw) ? Variant::BlockSum : Variant::DenseFallback;
  if (has_sw) return (has_id || has_diag || has_lr || sandwiches_.size() > 1) ? Variant::BlockSum : Variant::Sandwich;
  if (has_diag) return Variant::DiagonalPlusLowRank;
  return Variant::ScaledIdentityPlusLowRank;
}

std::size_t GradientBlock::storage() const {
  std::size_t s = 1 + static_cast<std::size_t>(diag_.size() + U_.size() + C_.size() + V_.size() + dense_.size());
  for (const auto& t : sandwiches_) {
    s += 1 + t.inner->storage() + static_cast<std::size_t>(t.jx->is_diagonal() ? t.jx->rows() : t.jx->rows() * t.jx->cols());
    s += static_cast<std::size_t>(t.jy->is_diagonal() ? t.jy->rows() : t.jy->rows() * t.jy->cols());
  }
  return s;
}

void GradientBlock::add_diagonal(const VectorXd& d) {
  require_dim(d.size() == dim_, "diagonal length mismatch");
  if (diag_.size() == 0) {
    diag_ = d;
  } else {
    diag_ += d;
  }
}

void GradientBlock::add_low_rank(const MatrixXd& U, const MatrixXd& C, const MatrixXd& V) {
  require_dim(U.rows() == dim_ && V.rows() == dim_ && C.rows() == U.cols() && C.cols() == V.cols(),
              "low-rank factor shapes do not agree");
  if (U.cols() == 0) return;
  // Keep a shared column count for U and V so the core stays r×r.
  const Index r0 = U_.cols();
  const Index cu = U.cols();
  const Index cv = V.cols();
  MatrixXd nU(dim_, r0 + cu + cv), nV(dim_, r0 + cu + cv);
  MatrixXd nC = MatrixXd::Zero(r0 + cu + cv, r0 + cu + cv);
  if (cu == cv) {
    nU.resize(dim_, r0 + cu);
    nV.resize(dim_, r0 + cu);
    nC = MatrixXd::Zero(r0 + cu, r0 + cu);
    nU << U_, U;
    nV << V_, V;
    if (r0 > 0) nC.topLeftCorner(r0, r0) = C_;
    nC.bottomRightCorner(cu, cu) = C;
  } else {
    // Pad into a square core: [U 0] [[0 C],[0 0]] [0 V]ᵀ.
    nU << U_, U, MatrixXd::Zero(dim_, cv);
    nV << V_, MatrixXd::Zero(dim_, cu), V;
    if (r0 > 0) nC.topLeftCorner(r0, r0) = C_;
    nC.block(r0, r0 + cu, cu, cv) = C;
  }
  U_ = std::move(nU);
  V_ = std::move(nV);
  C_ = std::move(nC);
}

void GradientBlock::add_rank_one(double c, const VectorXd& u, const VectorXd& v) {
  if (c == 0.0) return;
  MatrixXd C(1, 1);
  C(0, 0) = c;
  add_low_rank(u, C, v);
}

void GradientBlock::add_dense(const MatrixXd& M) {
  require_dim(M.rows() == dim_ && M.cols() == dim_, "dense part shape mismatch");
  if (dense_.size() == 0) {
    dense_ = M;
  } else {
    dense_ += M;
  }
}

GradientBlock& GradientBlock::operator+=(const GradientBlock& o) {
  require_dim(o.dim_ == dim_, "gradient block dimensions differ");
  alpha_ += o.alpha_;
  if (o.diag_.size() > 0) add_diagonal(o.diag_);
  if (o.U_.cols() > 0) add_low_rank(o.U_, o.C_, o.V_);
  sandwiches_.insert(sandwiches_.end(), o.sandwiches_.begin(), o.sandwiches_.end());
  if (o.dense_.size() > 0) add_dense(o.dense_);
  return *this;
}

GradientBlock& GradientBlock::operator*=(double s) {
  alpha_ *= s;
  diag_ *= s;
  C_ *= s;
  for (auto& t : sandwiches_) t.scale *= s;
  dense_ *= s;
  return *this;
}

GradientBlock GradientBlock::transposed() const {
  GradientBlock b(dim_);
  b.alpha_ = alpha_;
  b.diag_ = diag_;
  b.U_ = V_;
  b.V_ = U_;
  b.C_ = C_.transpose();
  b.sandwiches_ = sandwiches_;
  for (auto& t : b.sandwiches_) {
    std::swap(t.jx, t.jy);
    t.transposed = !t.transposed;
  }
  if (dense_.size() > 0) b.dense_ = dense_.transpose();
  return b;
}

void GradientBlock::apply_add(const double* v, double* out, double coef) const {
  const auto d = static_cast<std::size_t>(dim_);
  if (alpha_ != 0.0) simd::axpy(coef * alpha_, v, out, d);
  if (diag_.size() > 0) {
    if (coef == 1.0) {
      simd::hadamard_acc(diag_.data(), v, out, d);
    } else {
      for (std::size_t i = 0; i < d; ++i) out[i] += coef * diag_[static_cast<Index>(i)] * v[i];
      simd::count(2 * d);
    }
  }
  const Index r = U_.cols();
  if (r > 0) {
    VectorXd w(r);
    for (Index j = 0; j < r; ++j) w[j] = simd::dot(V_.col(j).data(), v, d);
    VectorXd z = C_ * w;
    simd::count(static_cast<std::uint64_t>(r * r));
    for (Index j = 0; j < r; ++j) {
      if (z[j] != 0.0) simd::axpy(coef * z[j], U_.col(j).data(), out, d);
    }
  }
  for (const auto& t : sandwiches_) {
    const Index m = t.inner->dim();
    VectorXd a(m), b = VectorXd::Zero(m);
    t.jy->apply(v, a.data());
    if (t.transposed) {
      t.inner->apply_transpose_add(a.data(), b.data());
    } else {
      t.inner->apply_add(a.data(), b.data());
    }
    t.jx->apply_transpose_add(b.data(), out, coef * t.scale);
  }
  if (dense_.size() > 0) {
    for (Index j = 0; j < dim_; ++j) {
      if (v[j] != 0.0) {
        simd::axpy(coef * v[j], dense_.col(j).data(), out, d);
      } else {
        simd::count(d);
      }
    }
  }
}

void GradientBlock::apply_transpose_add(const double* v, double* out, double coef) const {
  transposed().apply_add(v, out, coef);
}

VectorXd GradientBlock::apply(const VectorXd& v) const {
  require_dim(v.size() == dim_, "vector length does not match the block dimension");
  VectorXd out = VectorXd::Zero(dim_);
  apply_add(v.data(), out.data());
  return out;
}

VectorXd GradientBlock::apply_transpose(const VectorXd& v) const {
  require_dim(v.size() == dim_, "vector length does not match the block dimension");
  VectorXd out = VectorXd::Zero(dim_);
  apply_transpose_add(v.data(), out.data());
  return out;
}

std::string to_string(GradientBlock::Variant v) {
  switch (v) {
    case GradientBlock::Variant::Zero: return "Zero";
    case GradientBlock::Variant::ScaledIdentityPlusLowRank: return "ScaledIdentityPlusLowRank";
    case GradientBlock::Variant::DiagonalPlusLowRank: return "DiagonalPlusLowRank";
    case GradientBlock::Variant::Sandwich: return "Sandwich";
    case GradientBlock::Variant::BlockSum: return "BlockSum";
    case GradientBlock::Variant::DenseFallback: return "DenseFallback";
  }
  return "?";
}

VectorXd apply(const GradientBlock& block, const VectorXd& v) { return block.apply(v); }

MatrixXd materialize(const GradientBlock& block) {
  const Index d = block.dim();
  MatrixXd M = MatrixXd::Zero(d, d);
  VectorXd e = VectorXd::Zero(d);
  for (Index j = 0; j < d; ++j) {
    e[j] = 1.0;
    block.apply_add(e.data(), M.col(j).data());
    e[j] = 0.0;
  }
  return M;
}

// -- forward-mode fallback ------------------------------------------------------

namespace {

template <int K>
std::vector<Jet<K>> lift(const VectorXd& x) {
  std::vector<Jet<K>> out(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) out[i] = Jet<K>(x[i]);
  return out;
}

}  // namespace

GradPair forward_gradients(const KernelExpr& k, const VectorXd& x, const VectorXd& y) {
  detail::check_dims(k, x.size(), y.size());
  const Index d = x.size();
  GradPair p;
  p.gx.resize(d);
  p.gy.resize(d);
  auto jx = lift<1>(x);
  auto jy = lift<1>(y);
  for (Index i = 0; i < d; ++i) {
    jx[i].c[1] = 1.0;
    Jet<1> v = evaluate<Jet<1>>(k, std::span<const Jet<1>>(jx), std::span<const Jet<1>>(jy));
    jx[i].c[1] = 0.0;
    p.gx[i] = v.c[1];
    p.value = v.c[0];
    jy[i].c[1] = 1.0;
    v = evaluate<Jet<1>>(k, std::span<const Jet<1>>(jx), std::span<const Jet<1>>(jy));
    jy[i].c[1] = 0.0;
    p.gy[i] = v.c[1];
  }
  if (d == 0) p.value = evaluate(k, x, y);
  return p;
}

namespace {

// Entry by entry with Jet<2>: d² passes, for custom nodes that only
// implement a Jet<2> evaluation.
GradientResult dense_gradient_block_entrywise(const KernelExpr& k, const VectorXd& x, const VectorXd& y) {
  const Index d = x.size();
  MatrixXd G(d, d);
  GradPair p;
  p.gx.resize(d);
  p.gy.resize(d);
  auto jx = lift<2>(x);
  auto jy = lift<2>(y);
  for (Index i = 0; i < d; ++i) {
    jx[i].c[1] = 1.0;
    for (Index j = 0; j < d; ++j) {
      jy[j].c[2] = 1.0;
      Jet<2> v = evaluate<Jet<2>>(k, std::span<const Jet<2>>(jx), std::span<const Jet<2>>(jy));
      jy[j].c[2] = 0.0;
      G(i, j) = v.c[3];
      p.gx[i] = v.c[1];
      p.gy[j] = v.c[2];
      p.value = v.c[0];
    }
    jx[i].c[1] = 0.0;
  }
  if (d == 0) p.value = evaluate(k, x, y);
  return {GradientBlock::dense(std::move(G)), std::move(p)};
}

}  // namespace

GradientResult dense_gradient_block(const KernelExpr& k, const VectorXd& x, const VectorXd& y) {
  detail::check_dims(k, x.size(), y.size());
  const Index d = x.size();
  if (d == 0) return {GradientBlock::dense(MatrixXd(0, 0)), GradPair{evaluate(k, x, y), {}, {}}};
  // One pass per coordinate of x; y carries all d tangents at once.
  std::vector<ColumnJet> jx(x.data(), x.data() + d), jy(y.data(), y.data() + d);
  for (Index j = 0; j < d; ++j) jy[j].t = VectorXd::Unit(d, j);
  MatrixXd G(d, d);
  GradPair p;
  p.gx.resize(d);
  p.gy = VectorXd::Zero(d);
  try {
    for (Index i = 0; i < d; ++i) {
      jx[i].s = 1.0;
      const ColumnJet v = evaluate<ColumnJet>(k, std::span<const ColumnJet>(jx), std::span<const ColumnJet>(jy));
      jx[i].s = 0.0;
      if (v.m.size() == 0)
        G.row(i).setZero();
      else
        G.row(i) = v.m.transpose();
      p.gx[i] = v.s;
      if (i == 0) {
        p.value = v.v;
        if (v.t.size() > 0) p.gy = v.t;
      }
    }
  } catch (const UnsupportedNode&) {
    return dense_gradient_block_entrywise(k, x, y);
  }
  return {GradientBlock::dense(std::move(G)), std::move(p)};
}

// -- structured engine -----------------------------------------------------------

namespace {

GradientResult derive(const KernelExpr& k, const VectorXd& x, const VectorXd& y, const GradientOptions& opt);

GradientResult homogeneous(const KernelExpr& k, const InputTrait& trait, const VectorXd& x, const VectorXd& y) {
  const Index d = x.size();
  GradientResult res{GradientBlock(d), {}};
  auto sx = std::span<const double>(x.data(), x.size());
  auto sy = std::span<const double>(y.data(), y.size());
  switch (trait.kind) {
    case InputTrait::Kind::Isotropic: {
      VectorXd r = x - y;
      const double s = simd::dot(r.data(), r.data(), static_cast<std::size_t>(d));
      const Taylor4 t = *homogeneous_profile(k, s, 2);
      // G[r·r] = -2I, ∇ₓ(r·r) = 2r, ∇ᵧ(r·r) = -2r
      res.block.add_identity(-2.0 * t[1]);
      res.block.add_rank_one(-4.0 * t[2], r, r);
      res.pair.value = t[0];
      res.pair.gx = 2.0 * t[1] * r;
      res.pair.gy = -res.pair.gx;
      break;
    }
    case InputTrait::Kind::DotProduct: {
      const double s = simd::dot(x.data(), y.data(), static_cast<std::size_t>(d));
      const Taylor4 t = *homogeneous_profile(k, s, 2);
      res.block.add_identity(t[1]);
      res.block.add_rank_one(t[2], y, x);
      res.pair.value = t[0];
      res.pair.gx = t[1] * y;
      res.pair.gy = t[1] * x;
      break;
    }
    case InputTrait::Kind::StationaryLinearFunctional: {
      const double s = proto_value(Proto::LinearFunctional, trait.c, sx, sy);
      const Taylor4 t = *homogeneous_profile(k, s, 2);
      res.block.add_rank_one(-t[2], trait.c, trait.c);
      res.pair.value = t[0];
      res.pair.gx = t[1] * trait.c;
      res.pair.gy = -res.pair.gx;
      break;
    }
    case InputTrait::Kind::Generic:
      break;
  }
  return res;
}

GradientResult product_rule(const std::vector<GradientResult>& parts, Index d, GradientOptions::ProductRule rule) {
  const auto r = static_cast<Index>(parts.size());
  VectorXd kv(r);
  for (Index i = 0; i < r; ++i) kv[i] = parts[i].pair.value;
  const double total = kv.prod();
  const bool cheap = rule == GradientOptions::ProductRule::Auto && (kv.array() != 0.0).all();

  VectorXd p(r);
  MatrixXd P = MatrixXd::Zero(r, r);
  if (cheap) {
    // pᵢ = k/kᵢ, P = k·D⁻¹(11ᵀ - I)D⁻¹
    for (Index i = 0; i < r; ++i) {
      p[i] = total / kv[i];
      for (Index j = 0; j < r; ++j) {
        if (i != j) P(i, j) = total / (kv[i] * kv[j]);
      }
    }
  } else {
    for (Index i = 0; i < r; ++i) {
      double pi = 1.0;
      for (Index t = 0; t < r; ++t) {
        if (t != i) pi *= kv[t];
      }
      p[i] = pi;
      for (Index j = 0; j < r; ++j) {
        if (i == j) continue;
        double pij = 1.0;
        for (Index t = 0; t < r; ++t) {
          if (t != i && t != j) pij *= kv[t];
        }
        P(i, j) = pij;
      }
    }
  }

  GradientResult res{GradientBlock(d), {}};
  res.pair.value = total;
  res.pair.gx = VectorXd::Zero(d);
  res.pair.gy = VectorXd::Zero(d);
  MatrixXd Jx(d, r), Jy(d, r);
  for (Index i = 0; i < r; ++i) {
    res.block += p[i] * parts[i].block;
    res.pair.gx += p[i] * parts[i].pair.gx;
    res.pair.gy += p[i] * parts[i].pair.gy;
    Jx.col(i) = parts[i].pair.gx;
    Jy.col(i) = parts[i].pair.gy;
  }
  if (r > 1) res.block.add_low_rank(Jx, P, Jy);
  return res;
}

GradientResult direct_rule(const KernelExpr& k, const VectorXd& x, const VectorXd& y, const GradientOptions& opt) {
  const KernelNode& n = k.node();
  const Index d = x.size();
  const bool is_sum = n.kind == KernelNode::Kind::DirectSum;
  VectorXd kv(d), gdiag(d), gx(d), gy(d);
  for (Index i = 0; i < d; ++i) {
    GradientResult c = derive(n.children[i], VectorXd::Constant(1, x[i]), VectorXd::Constant(1, y[i]), opt);
    kv[i] = c.pair.value;
    gdiag[i] = materialize(c.block)(0, 0);
    gx[i] = c.pair.gx[0];
    gy[i] = c.pair.gy[0];
  }
  GradientResult res{GradientBlock(d), {}};
  if (is_sum) {
    res.block.add_diagonal(gdiag);
    res.pair.value = kv.sum();
    res.pair.gx = gx;
    res.pair.gy = gy;
    return res;
  }
  const double total = kv.prod();
  res.pair.value = total;
  if ((kv.array() != 0.0).all() && opt.product_rule == GradientOptions::ProductRule::Auto) {
    // Product rule with diagonal Jacobians: diagonal plus rank one.
    VectorXd p = total * kv.cwiseInverse();
    VectorXd u = gx.cwiseQuotient(kv);
    VectorXd v = gy.cwiseQuotient(kv);
    VectorXd diag = p.cwiseProduct(gdiag) - total * u.cwiseProduct(v);
    res.block.add_diagonal(diag);
    res.block.add_rank_one(total, u, v);
    res.pair.gx = p.cwiseProduct(gx);
    res.pair.gy = p.cwiseProduct(gy);
    return res;
  }
  // Leave-one-out products; the coupling matrix has no low-rank form in general.
  VectorXd p(d);
  MatrixXd M = MatrixXd::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    double pi = 1.0;
    for (Index t = 0; t < d; ++t) {
      if (t != i) pi *= kv[t];
    }
    p[i] = pi;
    for (Index j = 0; j < d; ++j) {
      if (i == j) continue;
      double pij = 1.0;
      for (Index t = 0; t < d; ++t) {
        if (t != i && t != j) pij *= kv[t];
      }
      M(i, j) = gx[i] * pij * gy[j];
    }
  }
  res.block.add_diagonal(p.cwiseProduct(gdiag));
  res.block.add_dense(M);
  res.pair.gx = p.cwiseProduct(gx);
  res.pair.gy = p.cwiseProduct(gy);
  return res;
}

GradientResult vertical_rule(const KernelExpr& k, const VectorXd& x, const VectorXd& y, const GradientOptions& opt) {
  const KernelNode& n = k.node();
  const Index d = x.size();
  const auto fx = n.f.derivs(simd::dot(x.data(), x.data(), static_cast<std::size_t>(d)), 1);
  const auto fy = n.f.derivs(simd::dot(y.data(), y.data(), static_cast<std::size_t>(d)), 1);
  const double F = fx[0], E = fy[0];
  const VectorXd dF = 2.0 * fx[1] * x;
  const VectorXd dE = 2.0 * fy[1] * y;
  GradientResult h = derive(n.children[0], x, y, opt);
  const double hv = h.pair.value;

  GradientResult res{F * E * h.block, {}};
  // [∇F  ∇ₓh] [[E, h],[0, F]] [∇ᵧh  ∇E]ᵀ
  MatrixXd U(d, 2), V(d, 2), C(2, 2);
  U << dF, h.pair.gx;
  V << h.pair.gy, dE;
  C << E, hv, 0.0, F;
  res.block.add_low_rank(U, C, V);
  res.pair.value = F * hv * E;
  res.pair.gx = hv * E * dF + F * E * h.pair.gx;
  res.pair.gy = F * hv * dE + F * E * h.pair.gy;
  return res;
}

GradientResult warp_rule(const KernelExpr& k, const VectorXd& x, const VectorXd& y, const GradientOptions& opt) {
  const KernelNode& n = k.node();
  VectorXd ux, uy;
  MatrixXd Jx, Jy;
  n.warp->map_with_jacobian(x, ux, Jx);
  n.warp->map_with_jacobian(y, uy, Jy);
  GradientResult h = derive(n.children[0], ux, uy, opt);
  const bool diag = n.warp->kind() == WarpMap::Kind::Diagonal;
  Jacobian jx = diag ? Jacobian::diagonal(n.warp->scales()) : Jacobian::dense(Jx);
  Jacobian jy = diag ? Jacobian::diagonal(n.warp->scales()) : Jacobian::dense(Jy);
  GradientResult res;
  res.pair.value = h.pair.value;
  res.pair.gx = VectorXd::Zero(x.size());
  res.pair.gy = VectorXd::Zero(x.size());
  jx.apply_transpose_add(h.pair.gx.data(), res.pair.gx.data(), 1.0);
  jy.apply_transpose_add(h.pair.gy.data(), res.pair.gy.data(), 1.0);
  res.block = GradientBlock::sandwich(std::move(jx), std::move(h.block), std::move(jy));
  return res;
}

GradientResult derive(const KernelExpr& k, const VectorXd& x, const VectorXd& y, const GradientOptions& opt) {
  const KernelNode& n = k.node();
  const InputTrait trait = input_trait(k);
  if (!trait.is_generic()) return homogeneous(k, trait, x, y);

  const Index d = x.size();
  switch (n.kind) {
    case KernelNode::Kind::Sum: {
      GradientResult res{GradientBlock(d), {0.0, VectorXd::Zero(d), VectorXd::Zero(d)}};
      for (const auto& ch : n.children) {
        GradientResult c = derive(ch, x, y, opt);
        res.block += c.block;
        res.pair.value += c.pair.value;
        res.pair.gx += c.pair.gx;
        res.pair.gy += c.pair.gy;
      }
      return res;
    }
    case KernelNode::Kind::Product: {
      std::vector<GradientResult> parts;
      parts.reserve(n.children.size());
      for (const auto& ch : n.children) parts.push_back(derive(ch, x, y, opt));
      return product_rule(parts, d, opt.product_rule);
    }
    case KernelNode::Kind::Scale: {
      GradientResult c = derive(n.children[0], x, y, opt);
      c.block *= n.scale;
      c.pair.value *= n.scale;
      c.pair.gx *= n.scale;
      c.pair.gy *= n.scale;
      return c;
    }
    case KernelNode::Kind::Chain: {
      GradientResult g = derive(n.children[0], x, y, opt);
      if (n.f.smooth_order(g.pair.value) < 2) throw NonDifferentiable("outer function is not C² at the inner value");
      const auto f = n.f.derivs(g.pair.value, 2);
      GradientResult res{f[1] * g.block, {}};
      res.block.add_rank_one(f[2], g.pair.gx, g.pair.gy);
      res.pair.value = f[0];
      res.pair.gx = f[1] * g.pair.gx;
      res.pair.gy = f[1] * g.pair.gy;
      return res;
    }
    case KernelNode::Kind::DirectSum:
    case KernelNode::Kind::DirectProduct:
      return direct_rule(k, x, y, opt);
    case KernelNode::Kind::VerticalScale:
      return vertical_rule(k, x, y, opt);
    case KernelNode::Kind::Warp:
      return warp_rule(k, x, y, opt);
    case KernelNode::Kind::Custom:
    case KernelNode::Kind::Primitive:
      return dense_gradient_block(k, x, y);
  }
  throw UnsupportedNode("unknown kernel node");
}

}  // namespace

GradientResult gradient_block(const KernelExpr& k, const VectorXd& x, const VectorXd& y,
                              const GradientOptions& options) {
  detail::check_dims(k, x.size(), y.size());
  if (options.mode == GradientOptions::Mode::DenseFallback) return dense_gradient_block(k, x, y);
  return derive(k, x, y, options);
}

}  // namespace gradkernel
