#pragma once

#include <optional>

#include "bilevel/saddle.hpp"

namespace bilevel {

/// Quadratic saddle problem linearised at (hx, hy):
///   min_X max_Y <KX, Y> + 1/2 <Hg X, X> - 1/2 <Hf Y, Y> + <grad_l1, X> + <grad_l2, Y>
/// with Hg = hess g(hx), Hf = hess f*(hy).
struct AdjointSpec {
  LinOp k_op;
  Tensor hx;
  Tensor hy;
  BundlePtr g;
  BundlePtr fstar;
  Tensor grad_l1;
  Tensor grad_l2;
};

AdjointSpec build_adjoint(const SaddleSpec& spec, const Tensor& x_tilde, const Tensor& y_tilde,
                          const LossBundle& loss1, const LossBundle& loss2);

/// ||Hg X + l1 + K* Hf^{-1}(K X + l2)|| / mu_g >= ||X - X_bar||
double adjoint_residual_X(const AdjointSpec& a, const Tensor& X);
/// ||Hf Y - l2 + K Hg^{-1}(K* Y + l1)|| / mu_f* >= ||Y - Y_bar||
double adjoint_residual_Y(const AdjointSpec& a, const Tensor& Y);

SolveResult solve_adjoint(const AdjointSpec& a, double delta_X, double delta_Y,
                          const std::optional<PdhgState>& warm = std::nullopt,
                          long max_iter = kDefaultMaxIter);

}  // namespace bilevel
