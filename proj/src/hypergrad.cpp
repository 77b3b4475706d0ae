#include "bilevel/hypergrad.hpp"

#include <algorithm>
#include <cmath>

#include "bilevel/errors.hpp"

namespace bilevel {

double Tolerances::max() const { return std::max({eps_x, eps_y, delta_X, delta_Y}); }

BoundConstants bound_constants(const FunctionBundle& g, const FunctionBundle& fstar,
                               const LossBundle& loss1, const LossBundle& loss2, double k_norm,
                               const Tensor& x_tilde, const Tensor& y_tilde, const Tensor& X_tilde,
                               const Tensor& Y_tilde) {
  const double mg = g.mu(), mf = fstar.mu();
  const double l1 = loss1.l_smooth(), l2 = loss2.l_smooth();
  const double nX = norm(X_tilde), nY = norm(Y_tilde);
  const double ng1 = norm(loss1.grad(x_tilde)), ng2 = norm(loss2.grad(y_tilde));
  const double lg = g.l_grad(), lf = fstar.l_grad();
  const double hg = g.l_hess_conj(), hf = fstar.l_hess_conj();
  // Skip vanishing products so that an infinite Lipschitz constant times
  // zero does not poison the result.
  auto prod = [](double a, double b) { return (a == 0.0 || b == 0.0) ? 0.0 : a * b; };
  BoundConstants c;
  c.cx1 = (prod(hg * lg * lg * lg, nX) + l1) / mg;
  c.cx2 = prod(hf * lf * k_norm, k_norm * nX + ng2) / mg + l2 * k_norm / (mg * mf);
  c.cy1 = prod(hg * lg * k_norm, k_norm * nY + ng1) / mf + l1 * k_norm / (mg * mf);
  c.cy2 = (prod(hf * lf * lf * lf, nY) + l2) / mf;
  return c;
}

double hypergradient_bound(const BoundConstants& c, const Tolerances& t, const Tensor& x_tilde,
                           const Tensor& y_tilde, const Tensor& X_tilde, const Tensor& Y_tilde) {
  const double nx = norm(x_tilde), ny = norm(y_tilde), nX = norm(X_tilde), nY = norm(Y_tilde);
  auto prod = [](double a, double b) { return (a == 0.0 || b == 0.0) ? 0.0 : a * b; };
  return prod(prod(c.cy1, nx) + prod(c.cx1, ny) + nY, t.eps_x) +
         prod(prod(c.cy2, nx) + prod(c.cx2, ny) + nX, t.eps_y) + ny * t.delta_X + nx * t.delta_Y +
         prod(c.cy1, t.eps_x * t.eps_x) + prod(c.cx2, t.eps_y * t.eps_y) +
         prod(c.cx1 + c.cy2, t.eps_x * t.eps_y) + t.delta_X * t.eps_y + t.delta_Y * t.eps_x;
}

double adjoint_distance_bound_X(const BoundConstants& c, const Tolerances& t) {
  return c.cx1 * t.eps_x + c.cx2 * t.eps_y + t.delta_X;
}

double adjoint_distance_bound_Y(const BoundConstants& c, const Tolerances& t) {
  return c.cy1 * t.eps_x + c.cy2 * t.eps_y + t.delta_Y;
}

LowerSolve solve_lower(const Problem& problem, const Tensor& theta, const TrainingPair& sample,
                       double eps_x, double eps_y, const std::optional<PdhgState>& warm, long max_iter) {
  LowerSolve r;
  r.instance.emplace(problem.build(theta, sample));
  const ProblemInstance& inst = *r.instance;
  r.solve = solve_saddle(inst.spec, eps_x, eps_y, warm, max_iter);
  r.loss = inst.loss1.value(r.solve.x) + inst.loss2.value(r.solve.y);
  const double g1 = norm(inst.loss1.grad(r.solve.x));
  const double g2 = norm(inst.loss2.grad(r.solve.y));
  r.loss_grad_norm = std::sqrt(g1 * g1 + g2 * g2);
  r.l_smooth = inst.loss1.l_smooth() + inst.loss2.l_smooth();
  return r;
}

PiggybackResult piggyback_from(const Problem& problem, const Tensor& theta,
                               const TrainingPair& sample, const Tolerances& tol, LowerSolve lower,
                               const std::optional<PdhgState>& adjoint_warm, long max_iter) {
  if (!lower.instance) lower.instance.emplace(problem.build(theta, sample));
  const ProblemInstance& inst = *lower.instance;
  const std::size_t h = sample.corrupted.dims()[0], w = sample.corrupted.dims()[1];

  PiggybackResult r;
  r.tol = tol;
  r.x_tilde = lower.solve.x;
  r.y_tilde = lower.solve.y;
  r.saddle_iters = lower.solve.iters;
  r.loss = lower.loss;
  r.loss_grad_norm = lower.loss_grad_norm;
  r.l_smooth = lower.l_smooth;
  r.primal_state = std::move(lower.solve.state);

  const AdjointSpec a = build_adjoint(inst.spec, r.x_tilde, r.y_tilde, inst.loss1, inst.loss2);
  SolveResult adj = solve_adjoint(a, tol.delta_X, tol.delta_Y, adjoint_warm, max_iter);
  r.X_tilde = std::move(adj.x);
  r.Y_tilde = std::move(adj.y);
  r.adjoint_iters = adj.iters;
  r.adjoint_state = std::move(adj.state);
  r.lower_iters = r.saddle_iters + r.adjoint_iters;

  r.z_theta = problem.theta_gradient(r.X_tilde, r.y_tilde, h, w);
  r.z_theta += problem.theta_gradient(r.x_tilde, r.Y_tilde, h, w);

  r.consts = bound_constants(*inst.spec.g, *inst.spec.fstar, inst.loss1, inst.loss2,
                             inst.spec.k_op.norm_est(), r.x_tilde, r.y_tilde, r.X_tilde, r.Y_tilde);
  r.bound_operator = hypergradient_bound(r.consts, tol, r.x_tilde, r.y_tilde, r.X_tilde, r.Y_tilde);
  r.bound_X = adjoint_distance_bound_X(r.consts, tol);
  r.bound_Y = adjoint_distance_bound_Y(r.consts, tol);
  r.param_norm = problem.param_norm(h, w);
  r.bound_theta = r.param_norm * r.bound_operator;
  r.heuristic = problem.assumptions_violated() || !inst.spec.g->certified() ||
                !inst.spec.fstar->certified();
  return r;
}

PiggybackResult inexact_piggyback(const Problem& problem, const Tensor& theta,
                                  const TrainingPair& sample, const Tolerances& tol,
                                  const PiggybackWarm& warm, long max_iter) {
  if (!(tol.eps_x > 0.0 && tol.eps_y > 0.0 && tol.delta_X > 0.0 && tol.delta_Y > 0.0))
    throw ParameterError("inexact_piggyback: tolerances must be > 0");
  LowerSolve lower = solve_lower(problem, theta, sample, tol.eps_x, tol.eps_y, warm.primal, max_iter);
  return piggyback_from(problem, theta, sample, tol, std::move(lower), warm.adjoint, max_iter);
}

std::vector<PiggybackWarm> BatchResult::warms() const {
  std::vector<PiggybackWarm> out;
  out.reserve(per_sample.size());
  for (const auto& r : per_sample) out.push_back(r.warm());
  return out;
}

BatchResult batch_hypergradient(const Problem& problem, const Tensor& theta,
                                const std::vector<TrainingPair>& samples, const Tolerances& tol,
                                const std::vector<PiggybackWarm>& warms, long max_iter) {
  if (samples.empty()) throw ParameterError("batch_hypergradient: no samples");
  if (!warms.empty() && warms.size() != samples.size())
    throw DimensionError("batch_hypergradient: one warm start per sample expected");
  BatchResult b;
  b.z_theta = Tensor(problem.theta_dims());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string where = "sample " + std::to_string(i) + ": ";
    try {
      b.per_sample.push_back(inexact_piggyback(problem, theta, samples[i], tol,
                                               warms.empty() ? PiggybackWarm{} : warms[i], max_iter));
    } catch (const ToleranceNotReached& e) {
      throw ToleranceNotReached(where + e.what(), e.best_first(), e.best_second());
    } catch (const DivergenceError& e) {
      throw DivergenceError(where + e.what());
    }
    const PiggybackResult& r = b.per_sample.back();
    b.z_theta += r.z_theta;
    b.bound += r.bound_theta;
    b.lower_iters += r.lower_iters;
    b.loss += r.loss;
    b.loss_grad_norm += r.loss_grad_norm;
    b.l_smooth = std::max(b.l_smooth, r.l_smooth);
    b.heuristic = b.heuristic || r.heuristic;
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  b.z_theta *= inv;
  b.bound *= inv;
  b.loss *= inv;
  b.loss_grad_norm *= inv;
  return b;
}

}  // namespace bilevel
