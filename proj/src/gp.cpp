#include "gradkernel/gp.hpp"

#include <cmath>
#include <string>

#include "gradkernel/errors.hpp"
#include "gradkernel/grad_block.hpp"

namespace gradkernel {

void GradObservations::validate() const {
  require_dim(y.size() == X.cols(), "one value per observation point");
  require_dim(G.cols() == 0 || (G.cols() == X.cols() && G.rows() == X.rows()), "gradients must be d×n");
  if (!X.allFinite() || !y.allFinite() || !G.allFinite()) throw DomainError("observations must be finite");
  if (noise_value < 0 || noise_grad < 0) throw DomainError("noise variances must be nonnegative");
}

Posterior prior_posterior(const KernelExpr& k, Index d) {
  Posterior p;
  p.k_ = k;
  p.d_ = d;
  p.obs_.X = MatrixXd(d, 0);
  p.report_.converged = true;
  return p;
}

Posterior fit(const KernelExpr& k, const GradObservations& obs, const FitOptions& options) {
  obs.validate();
  if (obs.n() == 0) throw DimensionMismatch("fit needs at least one observation");
  Posterior p;
  p.k_ = k;
  p.obs_ = obs;
  p.opt_ = options;
  p.d_ = obs.d();

  LazyBlockMatrix::Options lo;
  lo.mode = options.mode;
  lo.gradients = obs.has_gradients();
  lo.noise_value = obs.noise_value;
  lo.noise_grad = obs.noise_grad;
  lo.threads = options.threads;
  auto op = std::make_shared<LazyBlockMatrix>(k, obs.X, lo);

  const Index n = obs.n(), d = obs.d();
  VectorXd rhs(op->total_dim());
  rhs.head(n) = obs.y;
  if (obs.has_gradients()) rhs.tail(n * d) = obs.G.reshaped();

  if (options.solver == FitOptions::Solver::DenseCholesky) {
    auto f = std::make_shared<Eigen::LDLT<MatrixXd>>(op->materialize(true));
    if (f->info() != Eigen::Success) throw NotPSD("kernel matrix factorization failed");
    p.alpha_ = f->solve(rhs);
    p.report_.converged = true;
    p.report_.final_residual = (op->mvm(p.alpha_) - rhs).norm() / std::max(rhs.norm(), 1e-300);
    p.factor_ = std::move(f);
  } else {
    auto [x, rep] = cg_solve(*op, 0.0, rhs, CGOptions{options.tol, options.max_iter, true});
    p.alpha_ = std::move(x);
    p.report_ = rep;
  }
  p.op_ = std::move(op);
  return p;
}

std::vector<std::string> Posterior::warnings() const {
  std::lock_guard lock(warnings_->m);
  return warnings_->items;
}

VectorXd Posterior::solve(const VectorXd& b) const {
  if (factor_) return factor_->solve(b);
  return cg_solve(*op_, 0.0, b, CGOptions{opt_.tol, opt_.max_iter, true}).first;
}

VectorXd Posterior::cross_covariance(const VectorXd& x) const {
  require_dim(x.size() == d_, "query dimension");
  const Index n = obs_.n(), d = d_;
  const bool grads = obs_.has_gradients();
  VectorXd ks(grads ? n * (1 + d) : n);
  for (Index i = 0; i < n; ++i) {
    const VectorXd xi = obs_.X.col(i);
    if (grads) {
      const GradPair g = forward_gradients(k_, x, xi);
      ks(i) = g.value;
      ks.segment(n + i * d, d) = g.gy;
    } else {
      ks(i) = evaluate(k_, x, xi);
    }
  }
  return ks;
}

double Posterior::predict_mean(const VectorXd& x) const {
  if (n() == 0) return 0.0;
  return cross_covariance(x).dot(alpha_);
}

VectorXd Posterior::predict_mean_grad(const VectorXd& x) const {
  require_dim(x.size() == d_, "query dimension");
  const Index n = obs_.n(), d = d_;
  VectorXd g = VectorXd::Zero(d);
  for (Index i = 0; i < n; ++i) {
    const VectorXd xi = obs_.X.col(i);
    if (obs_.has_gradients()) {
      // ∇ₓ of k(x, xᵢ) α_v + ∇ᵧk(x, xᵢ)·α_g is ∇ₓk α_v + G[k](x, xᵢ) α_g.
      const GradientResult r = gradient_block(k_, x, xi);
      g += alpha_(i) * r.pair.gx;
      r.block.apply_add(alpha_.data() + n + i * d, g.data());
    } else {
      g += alpha_(i) * forward_gradients(k_, x, xi).gx;
    }
  }
  return g;
}

double Posterior::predict_var(const VectorXd& x) const {
  const double prior = evaluate(k_, x, x);
  if (n() == 0) return std::max(prior, 0.0);
  const VectorXd ks = cross_covariance(x);
  const double v = prior - ks.dot(solve(ks));
  if (v < -1e-8) {
    std::lock_guard lock(warnings_->m);
    warnings_->items.push_back("negative predictive variance " + std::to_string(v) + " clamped to 0");
  }
  return std::max(v, 0.0);
}

VectorXd Posterior::predict_var_grad(const VectorXd& x) const { return predict(x).var_grad; }

Prediction Posterior::predict(const VectorXd& x) const {
  require_dim(x.size() == d_, "query dimension");
  Prediction out;
  const GradPair self = forward_gradients(k_, x, x);
  out.var = self.value;
  out.var_grad = self.gx + self.gy;
  out.mean_grad = VectorXd::Zero(d_);
  const Index n = obs_.n(), d = d_;
  if (n == 0) {
    out.var = std::max(out.var, 0.0);
    return out;
  }
  const bool grads = obs_.has_gradients();
  // k_* and the rows of its Jacobian ∂k_*/∂x, kept per point.
  VectorXd ks(alpha_.size());
  MatrixXd gx(d, n);
  std::vector<GradientBlock> blocks;
  if (grads) blocks.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const VectorXd xi = obs_.X.col(i);
    if (grads) {
      GradientResult r = gradient_block(k_, x, xi);
      ks(i) = r.pair.value;
      ks.segment(n + i * d, d) = r.pair.gy;
      gx.col(i) = r.pair.gx;
      blocks.push_back(std::move(r.block));
    } else {
      const GradPair g = forward_gradients(k_, x, xi);
      ks(i) = g.value;
      gx.col(i) = g.gx;
    }
  }
  // Jᵀw with Jᵀ = [∇ₓk(x, xᵢ) … | G[k](x, xᵢ) …].
  auto jt = [&](const VectorXd& w) {
    VectorXd g = gx * w.head(n);
    if (grads)
      for (Index i = 0; i < n; ++i) blocks[static_cast<std::size_t>(i)].apply_add(w.data() + n + i * d, g.data());
    return g;
  };
  out.mean = ks.dot(alpha_);
  out.mean_grad = jt(alpha_);
  const VectorXd w = solve(ks);
  out.var -= ks.dot(w);
  out.var_grad -= 2.0 * jt(w);
  if (out.var < -1e-8) {
    std::lock_guard lock(warnings_->m);
    warnings_->items.push_back("negative predictive variance " + std::to_string(out.var) + " clamped to 0");
  }
  out.var = std::max(out.var, 0.0);
  return out;
}

}  // namespace gradkernel
