#include <doctest.h>

#include "bilevel/adjoint.hpp"
#include "bilevel/conv.hpp"
#include "helpers.hpp"

using namespace bilevel;
using namespace testing_support;

namespace {

AdjointSpec scalar_adjoint(double k, double c) {
  AdjointSpec a{ops::scaling({1}, k), Tensor({1}), Tensor({1}), quadratic_bundle(Tensor({1}), 1.0),
                quadratic_bundle(Tensor({1}), 1.0), Tensor::vector({c}), Tensor({1})};
  return a;
}

struct DenseAdjoint {
  AdjointSpec spec;
  Tensor X_bar, Y_bar;
};

// Smoothed group norm on g, so the Hessian varies with the linearisation point.
DenseAdjoint random_adjoint(std::size_t h, std::size_t w, std::uint64_t seed) {
  const Dims gd{2, h, w};
  ConvParametrization p(2, 3, 3, 2);
  const LinOp k = p.op(random_normal(p.theta_dims(), seed, 0.4), h, w);
  BundlePtr g = smoothed_group_norm_bundle(0.05, 0.3, GroupLayout{1, 2, h * w}, gd, 0.4);
  BundlePtr f = quadratic_bundle(random_normal(k.out_dims(), seed + 1), 0.7);
  const SaddleSpec s(k, g, f);
  const Tensor xt = random_normal(gd, seed + 2, 0.1), yt = random_normal(k.out_dims(), seed + 3);
  const Tensor target = random_normal(gd, seed + 4);
  const AdjointSpec a =
      build_adjoint(s, xt, yt, LossBundle::squared(target, gd), LossBundle::squared(random_normal(k.out_dims(), seed + 5), k.out_dims()));
  // KKT: Hg X + K^T Y = -l1, K X - Hf Y = -l2.
  const Eigen::MatrixXd K = dense(k), Hg = dense_hessian(*g, xt), Hf = dense_hessian(*f, yt);
  const Eigen::Index n = K.cols(), m = K.rows();
  Eigen::MatrixXd M(n + m, n + m);
  M << Hg, K.transpose(), K, -Hf;
  Eigen::VectorXd rhs(n + m);
  rhs << -vec(a.grad_l1), -vec(a.grad_l2);
  const Eigen::VectorXd sol = M.fullPivLu().solve(rhs);
  return {a, tensor(sol.head(n), gd), tensor(sol.tail(m), k.out_dims())};
}

}  // namespace

TEST_CASE("build_adjoint takes the loss gradients") {
  const Tensor u = Tensor::vector({2.0});
  const SaddleSpec s(ops::identity({1}), quadratic_bundle(u, 1.0), quadratic_bundle(Tensor({1}), 1.0));
  const Tensor xt = Tensor::vector({0.9}), xstar = Tensor::vector({0.25});
  const AdjointSpec a = build_adjoint(s, xt, Tensor::vector({1.1}), LossBundle::squared(xstar, {1}), LossBundle::zero({1}));
  CHECK(a.grad_l1[0] == doctest::Approx(0.65));
  CHECK(a.grad_l2[0] == 0.0);
  // Quadratic bundles: Hessians are the constants mu I wherever evaluated.
  const Tensor d = Tensor::vector({3.0});
  CHECK(a.g->hess_apply(a.hx, d)[0] == 3.0);
  CHECK(a.fstar->hess_apply(Tensor::vector({-7.0}), d)[0] == 3.0);
}

TEST_CASE("scalar adjoint residuals") {
  const double k = 1.5, c = 0.8;
  const AdjointSpec a = scalar_adjoint(k, c);
  for (double X : {-1.0, 0.0, 0.3}) CHECK(adjoint_residual_X(a, Tensor::vector({X})) == doctest::Approx(std::abs((1 + k * k) * X + c)));
  CHECK(adjoint_residual_X(a, Tensor::vector({-c / (1 + k * k)})) <= 1e-15);
  const SolveResult r = solve_adjoint(a, 1e-8, 1e-8);
  CHECK(std::abs(r.x[0] + c / (1 + k * k)) <= 1e-8);
}

TEST_CASE("K = 0 decouples the dual residual") {
  AdjointSpec a{ops::zero({3}, {2}), Tensor({3}), Tensor({2}), quadratic_bundle(Tensor({3}), 1.0),
                quadratic_bundle(Tensor({2}), 2.0), random_normal({3}, 1), random_normal({2}, 2)};
  const Tensor Y = random_normal({2}, 3);
  CHECK(adjoint_residual_Y(a, Y) == doctest::Approx(norm(Y * 2.0 - a.grad_l2) / 2.0));
}

TEST_CASE("zero right-hand side is accepted immediately") {
  const AdjointSpec a = scalar_adjoint(2.0, 0.0);
  const SolveResult r = solve_adjoint(a, 1e-12, 1e-12);
  CHECK(r.iters == 0);
  CHECK(r.x[0] == 0.0);
  CHECK(r.y[0] == 0.0);
}

TEST_CASE("adjoint residuals vanish at and bound the distance to the dense solution") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const DenseAdjoint d = random_adjoint(5, 4, 10 * seed);
    CHECK(adjoint_residual_X(d.spec, d.X_bar) <= 1e-10);
    CHECK(adjoint_residual_Y(d.spec, d.Y_bar) <= 1e-10);
    for (double scale : {1e-5, 1e-2, 1.0}) {
      const Tensor X = d.X_bar + random_normal(d.X_bar.dims(), 300 + seed, scale);
      const Tensor Y = d.Y_bar + random_normal(d.Y_bar.dims(), 400 + seed, scale);
      CHECK(adjoint_residual_X(d.spec, X) >= norm(X - d.X_bar) * (1 - 1e-10));
      CHECK(adjoint_residual_Y(d.spec, Y) >= norm(Y - d.Y_bar) * (1 - 1e-10));
    }
  }
}

TEST_CASE("solve_adjoint meets its tolerances against the dense solution") {
  const DenseAdjoint d = random_adjoint(6, 6, 77);
  const SolveResult r = solve_adjoint(d.spec, 1e-7, 1e-6);
  CHECK(norm(r.x - d.X_bar) <= 1e-7);
  CHECK(norm(r.y - d.Y_bar) <= 1e-6);
  PdhgState warm;
  warm.x = d.X_bar;
  warm.y = d.Y_bar;
  CHECK(solve_adjoint(d.spec, 1e-8, 1e-8, warm).iters <= kCheckEvery);
}

TEST_CASE("adjoint solution minimises the reduced primal quadratic") {
  // X_bar = argmin 1/2 <B1 X, X> + <l1 + K* Hf^{-1} l2, X>, B1 = Hg + K* Hf^{-1} K.
  const DenseAdjoint d = random_adjoint(4, 4, 5);
  const Eigen::MatrixXd K = dense(d.spec.k_op), Hg = dense_hessian(*d.spec.g, d.spec.hx),
                        Hf = dense_hessian(*d.spec.fstar, d.spec.hy);
  const Eigen::MatrixXd Hfi = Hf.inverse();
  const Eigen::MatrixXd B1 = Hg + K.transpose() * Hfi * K;
  const Eigen::VectorXd b = vec(d.spec.grad_l1) + K.transpose() * Hfi * vec(d.spec.grad_l2);
  const Eigen::VectorXd X = B1.ldlt().solve(-b);
  CHECK((X - vec(d.X_bar)).norm() <= 1e-10 * std::max(1.0, X.norm()));
}
