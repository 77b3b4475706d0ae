#include "bilevel/adjoint.hpp"

#include "bilevel/errors.hpp"

namespace bilevel {

AdjointSpec build_adjoint(const SaddleSpec& spec, const Tensor& x_tilde, const Tensor& y_tilde,
                          const LossBundle& loss1, const LossBundle& loss2) {
  require_dims(x_tilde, spec.k_op.in_dims(), "build_adjoint x_tilde");
  require_dims(y_tilde, spec.k_op.out_dims(), "build_adjoint y_tilde");
  if (loss1.dims() != spec.k_op.in_dims() || loss2.dims() != spec.k_op.out_dims())
    throw SpecError("build_adjoint: loss dims do not match the saddle variables");
  AdjointSpec a{spec.k_op,       x_tilde,         y_tilde, spec.g, spec.fstar,
                loss1.grad(x_tilde), loss2.grad(y_tilde)};
  if (!all_finite(a.grad_l1) || !all_finite(a.grad_l2))
    throw SpecError("build_adjoint: non-finite loss gradient");
  return a;
}

double adjoint_residual_X(const AdjointSpec& a, const Tensor& X) {
  Tensor r = a.k_op.apply(X);
  r += a.grad_l2;
  Tensor res = a.k_op.adjoint_apply(a.fstar->hess_inv_apply(a.hy, r));
  res += a.g->hess_apply(a.hx, X);
  res += a.grad_l1;
  return norm(res) / a.g->mu();
}

double adjoint_residual_Y(const AdjointSpec& a, const Tensor& Y) {
  Tensor r = a.k_op.adjoint_apply(Y);
  r += a.grad_l1;
  Tensor res = a.k_op.apply(a.g->hess_inv_apply(a.hx, r));
  res += a.fstar->hess_apply(a.hy, Y);
  res -= a.grad_l2;
  return norm(res) / a.fstar->mu();
}

SolveResult solve_adjoint(const AdjointSpec& a, double delta_X, double delta_Y,
                          const std::optional<PdhgState>& warm, long max_iter) {
  Tensor x0 = warm ? warm->x : Tensor(a.k_op.in_dims());
  Tensor y0 = warm ? warm->y : Tensor(a.k_op.out_dims());
  require_dims(x0, a.k_op.in_dims(), "solve_adjoint warm X");
  require_dims(y0, a.k_op.out_dims(), "solve_adjoint warm Y");
  PdhgProblem prob{
      a.k_op,
      a.g->mu(),
      a.fstar->mu(),
      [&](double t, const Tensor& p) {
        Tensor v = p;
        v.axpy(-t, a.grad_l1);
        return a.g->hess_shift_inv_apply(a.hx, t, v);
      },
      [&](double s, const Tensor& p) {
        Tensor v = p;
        v.axpy(s, a.grad_l2);
        return a.fstar->hess_shift_inv_apply(a.hy, s, v);
      },
      [&](const Tensor& X) { return adjoint_residual_X(a, X); },
      [&](const Tensor& Y) { return adjoint_residual_Y(a, Y); },
      "solve_adjoint"};
  return run_pdhg(prob, delta_X, delta_Y, std::move(x0), std::move(y0), max_iter);
}

}  // namespace bilevel
