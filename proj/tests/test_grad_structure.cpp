#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gradkernel/errors.hpp"
#include "gradkernel/grad_block.hpp"
#include "gradkernel/kernel.hpp"
#include "gradkernel/simd.hpp"
#include "oracles.hpp"
#include "zoo.hpp"

using namespace gradkernel;

namespace {

/// Zoo plus the composite graphs: variable-coefficient regression and a
/// chain over a product.
std::vector<testzoo::Entry> with_composites(Eigen::Index d) {
  auto z = testzoo::zoo(d);
  std::mt19937_64 rng(17);
  const MatrixXd A = oracle::random_matrix(rng, std::min<Eigen::Index>(3, d), d) / std::sqrt(double(d));
  z.push_back({"varcoef", product({linear_warp(A, dot(0.0)), rbf()})});
  z.push_back({"exp_of_product", chain(ScalarFunction::exponential(0.5), product({rbf(), polynomial(2, 1.0)}))});
  z.push_back({"scaled_sum", sum({scale(0.5, neural_network()), rbf_network()})});
  return z;
}

int rank_of(const GradientBlock& b) { return static_cast<int>(b.rank()); }

}  // namespace

TEST_CASE("dot identity gives the identity block") {
  std::mt19937_64 rng(1);
  const KernelExpr k = primitive(Proto::Dot, ScalarFunction::identity());
  const VectorXd x = oracle::random_point(rng, 6), y = oracle::random_point(rng, 6), v = oracle::random_point(rng, 6);
  const auto g = gradient_block(k, x, y);
  CHECK((apply(g.block, v) - v).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.block.is_scaled_identity());
}

TEST_CASE("linear functional identity gives the zero block") {
  std::mt19937_64 rng(1);
  const KernelExpr k = primitive(Proto::LinearFunctional, ScalarFunction::identity(), VectorXd::Ones(5));
  const VectorXd x = oracle::random_point(rng, 5), y = oracle::random_point(rng, 5), v = oracle::random_point(rng, 5);
  const auto g = gradient_block(k, x, y);
  CHECK(g.block.variant() == GradientBlock::Variant::Zero);
  CHECK(apply(g.block, v).isZero(0.0));
  CHECK(materialize(g.block).isZero(0.0));
}

TEST_CASE("rbf block matches mixed finite differences in eight dimensions") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const VectorXd x = oracle::random_point(rng, 8), y = oracle::random_point(rng, 8);
    const MatrixXd G = materialize(gradient_block(rbf(), x, y).block);
    CHECK(oracle::max_rel_err(G, oracle::fd_gradient_block(rbf(), x, y)) <= 1e-5);
  }
}

TEST_CASE("neural network block matches its closed form in sixteen dimensions") {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 20; ++t) {
    const VectorXd x = oracle::random_point(rng, 16, 2.0), y = oracle::random_point(rng, 16, 2.0);
    const auto g = gradient_block(neural_network(), x, y);
    CHECK(oracle::max_rel_err(materialize(g.block), oracle::neural_network_block(x, y)) <= 1e-12);
    CHECK(rank_of(g.block) <= 4);
  }
}

TEST_CASE("apply on trivial blocks") {
  std::mt19937_64 rng(3);
  const VectorXd v = oracle::random_point(rng, 7);
  CHECK(apply(GradientBlock(7), v).isZero(0.0));
  const GradientBlock b = GradientBlock::low_rank(oracle::random_matrix(rng, 7, 2), MatrixXd::Zero(2, 2),
                                                  oracle::random_matrix(rng, 7, 2));
  GradientBlock id = GradientBlock::scaled_identity(7, 1.0);
  id += b;
  CHECK((apply(id, v) - v).cwiseAbs().maxCoeff() == 0.0);
  CHECK(materialize(id) == MatrixXd::Identity(7, 7));
  CHECK(materialize(GradientBlock(7)).isZero(0.0));
  CHECK_THROWS_AS(apply(id, VectorXd::Zero(6)), DimensionMismatch);
}

TEST_CASE("random structured blocks agree with their materialization") {
  std::mt19937_64 rng(32);
  const Eigen::Index d = 32;
  for (int t = 0; t < 10; ++t) {
    GradientBlock b = GradientBlock::scaled_identity(d, 0.3);
    b.add_diagonal(oracle::random_point(rng, d));
    b.add_low_rank(oracle::random_matrix(rng, d, 3), oracle::random_matrix(rng, 3, 3), oracle::random_matrix(rng, d, 3));
    b.add_low_rank(oracle::random_matrix(rng, d, 1), oracle::random_matrix(rng, 1, 2), oracle::random_matrix(rng, d, 2));
    GradientBlock innr = GradientBlock::scaled_identity(4, -1.0);
    innr.add_rank_one(0.5, oracle::random_point(rng, 4), oracle::random_point(rng, 4));
    b += 2.0 * GradientBlock::sandwich(Jacobian::dense(oracle::random_matrix(rng, 4, d)), innr,
                                       Jacobian::dense(oracle::random_matrix(rng, 4, d)));
    b += GradientBlock::sandwich(Jacobian::diagonal(oracle::random_point(rng, d)), GradientBlock::scaled_identity(d, 2.0),
                                 Jacobian::diagonal(oracle::random_point(rng, d)));
    const MatrixXd M = materialize(b);
    const VectorXd v = oracle::random_point(rng, d);
    const VectorXd ref = M * v;
    CHECK(oracle::max_rel_err(apply(b, v), ref) <= 1e-12);
    CHECK(oracle::max_rel_err(b.apply_transpose(v), M.transpose() * v) <= 1e-12);
    CHECK(oracle::max_rel_err(materialize(b.transposed()), M.transpose()) <= 1e-12);
  }
}

TEST_CASE("zoo and composite blocks match finite differences") {
  for (Eigen::Index d : {2, 5, 20}) {
    std::mt19937_64 rng(50 + d);
    for (const auto& e : with_composites(d)) {
      double worst = 0.0, worst_pair = 0.0;
      for (int t = 0; t < 50; ++t) {
        const VectorXd x = oracle::random_point(rng, d), y = oracle::random_point(rng, d);
        const auto g = gradient_block(e.kernel, x, y);
        worst = std::max(worst, oracle::max_rel_err(materialize(g.block), oracle::fd_gradient_block(e.kernel, x, y)));
        worst_pair = std::max(worst_pair, oracle::max_rel_err(g.pair.gx, oracle::fd_grad_x(e.kernel, x, y)));
        worst_pair = std::max(worst_pair, oracle::max_rel_err(g.pair.gy, oracle::fd_grad_x(e.kernel, y, x)));
        CHECK(g.pair.value == doctest::Approx(evaluate(e.kernel, x, y)).epsilon(1e-13));
      }
      INFO(e.name, " d=", d, " block err=", worst, " pair err=", worst_pair);
      CHECK(worst <= 1e-5);
      CHECK(worst_pair <= 1e-5);
    }
  }
}

TEST_CASE("structured and dense fallback agree") {
  std::mt19937_64 rng(70);
  GradientOptions dense;
  dense.mode = GradientOptions::Mode::DenseFallback;
  for (const auto& e : with_composites(6)) {
    const VectorXd x = oracle::random_point(rng, 6), y = oracle::random_point(rng, 6);
    const auto s = gradient_block(e.kernel, x, y);
    const auto f = gradient_block(e.kernel, x, y, dense);
    INFO(e.name);
    CHECK(f.block.variant() == GradientBlock::Variant::DenseFallback);
    CHECK(oracle::max_rel_err(materialize(s.block), materialize(f.block)) <= 1e-12);
    CHECK(oracle::max_rel_err(s.pair.gx, f.pair.gx) <= 1e-12);
    CHECK(oracle::max_rel_err(s.pair.gy, f.pair.gy) <= 1e-12);
  }
}

TEST_CASE("transpose symmetry") {
  for (Eigen::Index d : {3, 9}) {
    std::mt19937_64 rng(80 + d);
    for (const auto& e : with_composites(d)) {
      for (int t = 0; t < 10; ++t) {
        const VectorXd x = oracle::random_point(rng, d), y = oracle::random_point(rng, d);
        const MatrixXd a = materialize(gradient_block(e.kernel, x, y).block);
        const MatrixXd b = materialize(gradient_block(e.kernel, y, x).block);
        INFO(e.name);
        CHECK(oracle::max_rel_err(a, b.transpose()) <= 1e-12);
      }
    }
  }
}

TEST_CASE("product rule paths agree for nonzero children") {
  std::mt19937_64 rng(90);
  const Eigen::Index d = 7;
  const KernelExpr k = product({rbf(), cosine(oracle::random_point(rng, d)), polynomial(2, 1.0)});
  GradientOptions loo;
  loo.product_rule = GradientOptions::ProductRule::LeaveOneOut;
  for (int t = 0; t < 20; ++t) {
    const VectorXd x = oracle::random_point(rng, d), y = oracle::random_point(rng, d);
    const MatrixXd a = materialize(gradient_block(k, x, y).block);
    const MatrixXd b = materialize(gradient_block(k, x, y, loo).block);
    CHECK(oracle::max_rel_err(a, b) <= 1e-13);
  }
}

TEST_CASE("products with a vanishing child") {
  // cos(c·r) vanishes when c·r = π/2.
  const Eigen::Index d = 3;
  const VectorXd c = VectorXd::Unit(d, 0);
  const KernelExpr k = product({rbf(), cosine(c), polynomial(2, 1.0)});
  VectorXd x = (VectorXd(d) << 0.2, 0.1, -0.3).finished();
  VectorXd y = x;
  y[0] -= std::numbers::pi / 2;
  const auto g = gradient_block(k, x, y);
  CHECK(std::abs(g.pair.value) < 1e-15);
  CHECK(oracle::max_rel_err(materialize(g.block), oracle::fd_gradient_block(k, x, y)) <= 1e-5);

  // Direct product with a zeroed coordinate falls back to leave-one-out.
  const KernelExpr cs = cosine(VectorXd::Ones(1));
  const KernelExpr dp = direct_product({rbf(), cs, rbf()});
  const auto h = gradient_block(dp, x, y);
  CHECK(oracle::max_rel_err(materialize(h.block), oracle::fd_gradient_block(dp, x, y)) <= 1e-5);
}

TEST_CASE("direct sums and products") {
  std::mt19937_64 rng(95);
  const Eigen::Index d = 6;
  std::vector<KernelExpr> parts;
  for (Eigen::Index i = 0; i < d; ++i) parts.push_back(i % 2 ? rbf() : rational_quadratic(1.0 + i));
  const KernelExpr ds = direct_sum(parts), dp = direct_product(parts);
  for (int t = 0; t < 10; ++t) {
    const VectorXd x = oracle::random_point(rng, d), y = oracle::random_point(rng, d);
    const auto a = gradient_block(ds, x, y);
    CHECK(a.block.variant() == GradientBlock::Variant::DiagonalPlusLowRank);
    CHECK(a.block.rank() == 0);
    CHECK(oracle::max_rel_err(materialize(a.block), oracle::fd_gradient_block(ds, x, y)) <= 1e-5);
    const auto b = gradient_block(dp, x, y);
    CHECK(b.block.variant() == GradientBlock::Variant::DiagonalPlusLowRank);
    CHECK(b.block.rank() == 1);
    CHECK(oracle::max_rel_err(materialize(b.block), oracle::fd_gradient_block(dp, x, y)) <= 1e-5);
  }
}

TEST_CASE("ranks stay bounded by node arity") {
  std::mt19937_64 rng(96);
  const Eigen::Index d = 40;
  const VectorXd x = oracle::random_point(rng, d), y = oracle::random_point(rng, d);
  CHECK(gradient_block(rbf(), x, y).block.rank() == 1);
  CHECK(gradient_block(polynomial(3, 1.0), x, y).block.rank() == 1);
  CHECK(gradient_block(rbf_network(), x, y).block.rank() <= 3);
  const KernelExpr p3 = product({rbf(), cosine(oracle::random_point(rng, d)), exp_dot()});
  const auto g = gradient_block(p3, x, y);
  CHECK(g.block.rank() <= 6);
  CHECK(g.block.storage() <= static_cast<std::size_t>(4 * d * g.block.rank() + 64));
}

TEST_CASE("matern at coincident points uses the analytic limit") {
  const VectorXd x = VectorXd::Constant(4, 0.3);
  const auto g = gradient_block(matern52(), x, x);
  CHECK(oracle::max_rel_err(materialize(g.block), (5.0 / 3.0) * MatrixXd::Identity(4, 4)) <= 1e-14);
  CHECK(g.pair.gx.isZero(0.0));
  // Outside the outer function's domain the engine refuses.
  const KernelExpr bad = chain(ScalarFunction::matern52(), dot(0.0));
  CHECK_THROWS_AS(gradient_block(bad, VectorXd::Ones(2), -VectorXd::Ones(2)), DomainError);
}

TEST_CASE("custom kernels use the dense fallback") {
  CustomKernel ck;
  ck.eval = [](std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::sin(x[i]) * std::sin(y[i]);
    return s;
  };
  ck.eval_jet = [](std::span<const Jet<2>> x, std::span<const Jet<2>> y) {
    Jet<2> s(0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      // sin via the cosine of a shifted argument
      const auto f = ScalarFunction::cosine();
      Jet<2> a = x[i] - Jet<2>(std::numbers::pi / 2), b = y[i] - Jet<2>(std::numbers::pi / 2);
      s += apply(f, a) * apply(f, b);
    }
    return s;
  };
  const KernelExpr k = custom(ck);
  std::mt19937_64 rng(99);
  const VectorXd x = oracle::random_point(rng, 4), y = oracle::random_point(rng, 4);
  const auto g = gradient_block(k, x, y);
  CHECK(g.block.variant() == GradientBlock::Variant::DenseFallback);
  CHECK(oracle::max_rel_err(materialize(g.block), oracle::fd_gradient_block(k, x, y)) <= 1e-5);
}

TEST_CASE("apply cost is linear in d for structured blocks and quadratic for dense") {
  std::mt19937_64 rng(123);
  const std::vector<std::pair<std::string, KernelExpr>> ks = {
      {"rbf", rbf()}, {"nn", neural_network()}, {"rbfnet", rbf_network()}, {"qmix", quadratic_mixture(1.0)}};
  for (const auto& [name, k] : ks) {
    std::uint64_t prev = 0;
    for (Eigen::Index d = 64; d <= 2048; d *= 2) {
      const VectorXd x = oracle::random_point(rng, d), y = oracle::random_point(rng, d), v = oracle::random_point(rng, d);
      const auto g = gradient_block(k, x, y);
      simd::reset_multiplies();
      (void)apply(g.block, v);
      const std::uint64_t c = simd::multiplies();
      if (prev > 0) {
        INFO(name, " d=", d, " ratio=", double(c) / double(prev));
        CHECK(double(c) / double(prev) <= 2.5);
      }
      prev = c;
    }
  }
  std::uint64_t prev = 0;
  for (Eigen::Index d = 16; d <= 128; d *= 2) {
    const VectorXd x = oracle::random_point(rng, d), y = oracle::random_point(rng, d), v = oracle::random_point(rng, d);
    const auto g = dense_gradient_block(rbf(), x, y);
    simd::reset_multiplies();
    (void)apply(g.block, v);
    const std::uint64_t c = simd::multiplies();
    if (prev > 0) CHECK(double(c) / double(prev) >= 3.5);
    prev = c;
  }
}
