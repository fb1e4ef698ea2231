#include "gradkernel/lazy.hpp"

#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include "gradkernel/grad_block.hpp"
#include "gradkernel/hess_block.hpp"
#include "gradkernel/simd.hpp"

namespace gradkernel {

namespace {

std::size_t sz(Index n) { return static_cast<std::size_t>(n); }

MatrixXd kron_dense(const MatrixXd& A, const MatrixXd& B) {
  MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j) K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

}  // namespace

int env_threads() {
  if (const char* s = std::getenv("GRADKERNEL_THREADS")) {
    try {
      const int t = std::stoi(s);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

LazyBlockMatrix::LazyBlockMatrix(KernelExpr k, MatrixXd X, Options options)
    : k_(std::move(k)), X_(std::move(X)), opt_(options) {
  if (opt_.hessians) opt_.gradients = true;
  if (opt_.threads <= 0) opt_.threads = env_threads();
  if (X_.cols() > 0) detail::check_dims(k_, sz(X_.rows()), sz(X_.rows()));
  if (opt_.mode != Options::Mode::Structured || !opt_.gradients) return;

  // Strip scales down to a linear warp and factor it out of every block.
  double a = 1.0;
  KernelExpr node = k_;
  while (node.kind() == KernelNode::Kind::Scale) {
    a *= node.node().scale;
    node = node.children()[0];
  }
  if (node.kind() != KernelNode::Kind::Warp || !node.node().warp->is_linear()) return;
  const WarpMap& w = *node.node().warp;
  outer_scale_ = a;
  warp_diagonal_ = w.kind() == WarpMap::Kind::Diagonal;
  warp_ = warp_diagonal_ ? MatrixXd(w.scales().asDiagonal()) : w.matrix();
  Options inner = opt_;
  inner.noise_value = inner.noise_grad = inner.noise_hess = 0.0;
  inner.threads = opt_.threads;
  inner_ = std::make_unique<LazyBlockMatrix>(node.children()[0], MatrixXd(warp_ * X_), inner);
}

LazyBlockMatrix::~LazyBlockMatrix() = default;
LazyBlockMatrix::LazyBlockMatrix(LazyBlockMatrix&&) noexcept = default;
LazyBlockMatrix& LazyBlockMatrix::operator=(LazyBlockMatrix&&) noexcept = default;

Index LazyBlockMatrix::per_point() const {
  const Index d = this->d();
  return 1 + (opt_.gradients ? d : 0) + (opt_.hessians ? d * d : 0);
}

VectorXd LazyBlockMatrix::mvm(const VectorXd& v) const {
  require_dim(v.size() == total_dim(), "operand length does not match the block matrix");
  VectorXd out(total_dim());
  mvm(v.data(), out.data());
  return out;
}

void LazyBlockMatrix::mvm(const double* v, double* out) const {
  if (inner_) {
    mvm_factored(v, out);
  } else {
    mvm_direct(v, out);
  }
  add_noise(v, out);
}

void LazyBlockMatrix::add_noise(const double* v, double* out) const {
  const Index n = this->n(), d = this->d();
  auto add = [&](Index begin, Index count, double s) {
    if (s == 0.0 || count == 0) return;
    simd::axpy(s, v + begin, out + begin, sz(count));
  };
  add(0, n, opt_.noise_value);
  if (opt_.gradients) add(n, n * d, opt_.noise_grad);
  if (opt_.hessians) add(n + n * d, n * d * d, opt_.noise_hess);
}

void LazyBlockMatrix::mvm_direct(const double* v, double* out) const {
  std::fill(out, out + total_dim(), 0.0);
  const Index n = this->n();
  const int T = std::min<int>(opt_.threads, static_cast<int>(std::max<Index>(n, 1)));
  if (T <= 1) {
    mvm_rows(v, out, 0, n);
    return;
  }
  // Each worker owns a contiguous range of block rows, so the result does not
  // depend on the thread count.
  std::vector<std::thread> workers;
  std::vector<std::uint64_t> counts(sz(T), 0);
  for (int t = 0; t < T; ++t) {
    const Index b = n * t / T, e = n * (t + 1) / T;
    workers.emplace_back([this, v, out, b, e, &counts, t] {
      simd::reset_multiplies();
      mvm_rows(v, out, b, e);
      counts[sz(t)] = simd::multiplies();
    });
  }
  for (auto& w : workers) w.join();
  for (auto c : counts) simd::count(c);
}

void LazyBlockMatrix::mvm_rows(const double* v, double* out, Index row_begin, Index row_end) const {
  const Index n = this->n(), d = this->d(), d2 = d * d;
  const double* vg = v + n;
  const double* vh = v + n + n * d;
  double* og = out + n;
  double* oh = out + n + n * d;
  const bool dense = opt_.mode == Options::Mode::DenseFallback;
  GradientOptions gopt;
  if (dense) gopt.mode = GradientOptions::Mode::DenseFallback;
  HessianOptions hopt;
  if (dense) hopt.mode = HessianOptions::Mode::DenseFallback;

  VectorXd xi(d), xj(d);
  for (Index i = row_begin; i < row_end; ++i) {
    xi = X_.col(i);
    for (Index j = 0; j < n; ++j) {
      xj = X_.col(j);
      if (!opt_.gradients) {
        out[i] += evaluate(k_, xi, xj) * v[j];
        simd::count(1);
      } else if (!opt_.hessians) {
        const GradientResult g = gradient_block(k_, xi, xj, gopt);
        out[i] += g.pair.value * v[j] + simd::dot(g.pair.gy.data(), vg + d * j, sz(d));
        simd::axpy(v[j], g.pair.gx.data(), og + d * i, sz(d));
        g.block.apply_add(vg + d * j, og + d * i);
        simd::count(1);
      } else {
        const HessianResult h = hessian_blocks(k_, xi, xj, hopt);
        out[i] += h.value * v[j] + simd::dot(h.gy.data(), vg + d * j, sz(d)) +
                  simd::dot(h.hy.data(), vh + d2 * j, sz(d2));
        simd::axpy(v[j], h.gx.data(), og + d * i, sz(d));
        h.G.apply_add(vg + d * j, og + d * i);
        h.hgs.apply_transpose_add(vh + d2 * j, og + d * i);
        simd::axpy(v[j], h.hx.data(), oh + d2 * i, sz(d2));
        h.hg.apply_add(vg + d * j, oh + d2 * i);
        h.hh.apply_add(vh + d2 * j, oh + d2 * i);
        simd::count(1);
      }
    }
  }
}

void LazyBlockMatrix::mvm_factored(const double* v, double* out) const {
  const Index n = this->n(), d = this->d(), r = inner_->d();
  const Jacobian J = warp_diagonal_ ? Jacobian::diagonal(warp_.diagonal()) : Jacobian::dense(warp_);
  VectorXd w = VectorXd::Zero(inner_->total_dim());
  std::copy(v, v + n, w.data());
  for (Index j = 0; j < n; ++j) J.apply(v + n + d * j, w.data() + n + r * j);
  if (opt_.hessians) {
    for (Index j = 0; j < n; ++j) {
      const VectorXd h = warp_kron_apply(warp_, Eigen::Map<const VectorXd>(v + n + n * d + d * d * j, d * d));
      w.segment(n + n * r + r * r * j, r * r) = h;
    }
  }
  VectorXd o(inner_->total_dim());
  inner_->mvm(w.data(), o.data());

  const double a = outer_scale_;
  for (Index i = 0; i < n; ++i) out[i] = a * o[i];
  std::fill(out + n, out + total_dim(), 0.0);
  for (Index i = 0; i < n; ++i) J.apply_transpose_add(o.data() + n + r * i, out + n + d * i, a);
  if (opt_.hessians) {
    const MatrixXd Ut = warp_.transpose();
    for (Index i = 0; i < n; ++i) {
      const VectorXd h = warp_kron_apply(Ut, o.segment(n + n * r + r * r * i, r * r));
      Eigen::Map<VectorXd>(out + n + n * d + d * d * i, d * d) = a * h;
    }
  }
  simd::count(sz(n));
}

MatrixXd LazyBlockMatrix::pair_block(Index i, Index j) const {
  const Index d = this->d(), p = per_point();
  if (inner_) {
    const MatrixXd Bi = inner_->pair_block(i, j);
    const Index r = inner_->d();
    MatrixXd S = MatrixXd::Zero(p, inner_->per_point());
    S(0, 0) = 1.0;
    S.block(1, 1, d, r) = warp_.transpose();
    if (opt_.hessians) S.block(1 + d, 1 + r, d * d, r * r) = kron_dense(warp_, warp_).transpose();
    return outer_scale_ * S * Bi * S.transpose();
  }
  const VectorXd xi = X_.col(i), xj = X_.col(j);
  MatrixXd B(p, p);
  if (!opt_.gradients) {
    B(0, 0) = evaluate(k_, xi, xj);
    return B;
  }
  const bool dense = opt_.mode == Options::Mode::DenseFallback;
  if (!opt_.hessians) {
    GradientOptions gopt;
    if (dense) gopt.mode = GradientOptions::Mode::DenseFallback;
    const GradientResult g = gradient_block(k_, xi, xj, gopt);
    B(0, 0) = g.pair.value;
    B.block(0, 1, 1, d) = g.pair.gy.transpose();
    B.block(1, 0, d, 1) = g.pair.gx;
    B.block(1, 1, d, d) = gradkernel::materialize(g.block);
    return B;
  }
  HessianOptions hopt;
  if (dense) hopt.mode = HessianOptions::Mode::DenseFallback;
  const HessianResult h = hessian_blocks(k_, xi, xj, hopt);
  const Index d2 = d * d;
  B(0, 0) = h.value;
  B.block(0, 1, 1, d) = h.gy.transpose();
  B.block(0, 1 + d, 1, d2) = h.hy.transpose();
  B.block(1, 0, d, 1) = h.gx;
  B.block(1, 1, d, d) = gradkernel::materialize(h.G);
  B.block(1, 1 + d, d, d2) = gradkernel::materialize(h.hgs).transpose();
  B.block(1 + d, 0, d2, 1) = h.hx;
  B.block(1 + d, 1, d2, d) = gradkernel::materialize(h.hg);
  B.block(1 + d, 1 + d, d2, d2) = gradkernel::materialize(h.hh);
  return B;
}

void LazyBlockMatrix::add_point_noise(MatrixXd& B) const {
  const Index d = this->d();
  B(0, 0) += opt_.noise_value;
  if (opt_.gradients) B.diagonal().segment(1, d).array() += opt_.noise_grad;
  if (opt_.hessians) B.diagonal().segment(1 + d, d * d).array() += opt_.noise_hess;
}

std::vector<MatrixXd> LazyBlockMatrix::diagonal_blocks() const {
  std::vector<MatrixXd> blocks;
  blocks.reserve(sz(n()));
  for (Index i = 0; i < n(); ++i) {
    MatrixXd B = pair_block(i, i);
    add_point_noise(B);
    blocks.push_back(std::move(B));
  }
  return blocks;
}

MatrixXd LazyBlockMatrix::materialize(bool force) const {
  const Index N = total_dim();
  if (N > 4096 && !force) throw DimensionMismatch("refusing to materialize a block matrix larger than 4096");
  const Index n = this->n(), p = per_point();
  // Assemble point-major, then permute to the derivative-order-major layout.
  MatrixXd P(N, N);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      MatrixXd B = pair_block(i, j);
      if (i == j) add_point_noise(B);
      P.block(p * i, p * j, p, p) = B;
    }
  }
  std::vector<Index> perm(sz(N));  // perm[point-major index] = layout index
  for (Index c = 0; c < N; ++c) {
    const Index i = c / p, a = c % p;
    const Index g = opt_.gradients ? d() : 0, h = opt_.hessians ? d() * d() : 0;
    perm[sz(c)] = a == 0 ? i : (a <= g ? n + g * i + (a - 1) : n + n * g + h * i + (a - 1 - g));
  }
  MatrixXd M(N, N);
  for (Index c = 0; c < N; ++c)
    for (Index r = 0; r < N; ++r) M(perm[sz(r)], perm[sz(c)]) = P(r, c);
  return M;
}

VectorXd LazyBlockMatrix::to_point_major(const VectorXd& v) const {
  require_dim(v.size() == total_dim(), "operand length does not match the block matrix");
  const Index n = this->n(), d = this->d(), p = per_point();
  const Index g = opt_.gradients ? d : 0;
  const Index h = opt_.hessians ? d * d : 0;
  VectorXd out(v.size());
  for (Index i = 0; i < n; ++i) {
    out[p * i] = v[i];
    for (Index a = 0; a < g; ++a) out[p * i + 1 + a] = v[n + g * i + a];
    for (Index a = 0; a < h; ++a) out[p * i + 1 + g + a] = v[n + n * g + h * i + a];
  }
  return out;
}

VectorXd LazyBlockMatrix::from_point_major(const VectorXd& v) const {
  require_dim(v.size() == total_dim(), "operand length does not match the block matrix");
  const Index n = this->n(), d = this->d(), p = per_point();
  const Index g = opt_.gradients ? d : 0;
  const Index h = opt_.hessians ? d * d : 0;
  VectorXd out(v.size());
  for (Index i = 0; i < n; ++i) {
    out[i] = v[p * i];
    for (Index a = 0; a < g; ++a) out[n + g * i + a] = v[p * i + 1 + a];
    for (Index a = 0; a < h; ++a) out[n + n * g + h * i + a] = v[p * i + 1 + g + a];
  }
  return out;
}

// -- solvers ---------------------------------------------------------------------

std::pair<VectorXd, SolveReport> cg_solve(const LazyBlockMatrix& M, double shift, const VectorXd& b,
                                          const CGOptions& options) {
  const Index N = M.total_dim();
  require_dim(b.size() == N, "right-hand side length does not match the block matrix");
  SolveReport rep;
  VectorXd x = VectorXd::Zero(N);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    rep.converged = true;
    return {x, rep};
  }
  const double target = options.tol * bnorm;

  // Block-Jacobi preconditioner on the per-point blocks.
  std::vector<Eigen::LDLT<MatrixXd>> pre;
  if (options.block_jacobi) {
    for (MatrixXd B : M.diagonal_blocks()) {
      B.diagonal().array() += shift;
      pre.emplace_back(B);
    }
  }
  auto precondition = [&](const VectorXd& r) -> VectorXd {
    if (pre.empty()) return r;
    const VectorXd rp = M.to_point_major(r);
    VectorXd z(rp.size());
    const Index p = M.per_point();
    for (std::size_t i = 0; i < pre.size(); ++i) {
      const auto off = static_cast<Index>(i) * p;
      z.segment(off, p) = pre[i].solve(rp.segment(off, p));
    }
    return M.from_point_major(z);
  };
  auto apply = [&](const VectorXd& p) {
    VectorXd q = M.mvm(p);
    if (shift != 0.0) q += shift * p;
    return q;
  };

  VectorXd r = b;
  VectorXd best = x;
  double best_res = bnorm;
  while (rep.iterations < options.max_iter) {
    VectorXd z = precondition(r);
    VectorXd p = z;
    double rz = r.dot(z);
    while (rep.iterations < options.max_iter) {
      const VectorXd q = apply(p);
      const double pq = p.dot(q);
      if (!(pq > 0.0)) break;
      const double alpha = rz / pq;
      x += alpha * p;
      r -= alpha * q;
      ++rep.iterations;
      if (r.norm() <= target) break;
      z = precondition(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    // Confirm with the true residual; restart from x if the recurrence drifted.
    r = b - apply(x);
    const double res = r.norm();
    if (res < best_res) {
      best_res = res;
      best = x;
    }
    if (res <= target) {
      rep.final_residual = res;
      rep.converged = true;
      return {x, rep};
    }
    if (rep.iterations >= options.max_iter) break;
    // A break on non-positive curvature with no progress cannot recover.
    if (r.dot(precondition(r)) <= 0.0) break;
  }
  rep.final_residual = best_res;
  rep.converged = false;
  throw NotConverged(best, rep);
}

std::pair<VectorXd, SolveReport> cg_solve(const LazyBlockMatrix& M, double shift, const VectorXd& b, double tol,
                                          int max_iter) {
  CGOptions o;
  o.tol = tol;
  o.max_iter = max_iter;
  return cg_solve(M, shift, b, o);
}

MatrixXd pivoted_cholesky(const MatrixXd& E, double tol) {
  require_dim(E.rows() == E.cols(), "pivoted Cholesky needs a square matrix");
  const Index d = E.rows();
  VectorXd diag = E.diagonal();
  std::vector<VectorXd> rows;
  std::vector<bool> used(sz(d), false);
  for (Index step = 0; step < d; ++step) {
    Index p = -1;
    for (Index i = 0; i < d; ++i) {
      if (used[sz(i)]) continue;
      if (diag[i] < -tol) throw NotPSD("negative pivot " + std::to_string(diag[i]) + " in pivoted Cholesky");
      if (p < 0 || diag[i] > diag[p]) p = i;
    }
    if (p < 0 || diag[p] <= tol) break;
    VectorXd u = E.row(p).transpose();
    for (const auto& w : rows) u -= w[p] * w;
    u /= std::sqrt(diag[p]);
    for (Index i = 0; i < d; ++i) diag[i] -= u[i] * u[i];
    used[sz(p)] = true;
    rows.push_back(std::move(u));
  }
  MatrixXd U(static_cast<Index>(rows.size()), d);
  for (std::size_t k = 0; k < rows.size(); ++k) U.row(static_cast<Index>(k)) = rows[k].transpose();
  return U;
}

KernelExpr energetic_warp(const MatrixXd& E, KernelExpr inner, double tol) {
  return linear_warp(pivoted_cholesky(E, tol), std::move(inner));
}

}  // namespace gradkernel
