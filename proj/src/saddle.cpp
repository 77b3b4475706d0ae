#include "bilevel/saddle.hpp"

#include <cmath>
#include <limits>

#include "bilevel/errors.hpp"

namespace bilevel {

SaddleSpec::SaddleSpec(LinOp k, BundlePtr g_, BundlePtr fstar_)
    : k_op(std::move(k)), g(std::move(g_)), fstar(std::move(fstar_)) {
  if (!g || !fstar) throw SpecError("SaddleSpec: null bundle");
  if (g->dims() != k_op.in_dims())
    throw SpecError("SaddleSpec: g dims " + to_string(g->dims()) + " vs K input " +
                    to_string(k_op.in_dims()));
  if (fstar->dims() != k_op.out_dims())
    throw SpecError("SaddleSpec: f* dims " + to_string(fstar->dims()) + " vs K output " +
                    to_string(k_op.out_dims()));
  if (!(g->mu() > 0.0) || !(fstar->mu() > 0.0))
    throw SpecError("SaddleSpec: g and f* must be strongly convex");
}

PdhgState pdhg_init(double mu_g, double mu_f, double k_norm, Tensor x0, Tensor y0) {
  if (!(mu_g > 0.0) || !(mu_f > 0.0)) throw SpecError("pdhg_init: moduli must be positive");
  PdhgState s;
  s.nu = k_norm > 0.0 ? kNuSafety * 2.0 * std::sqrt(mu_g * mu_f) / k_norm : 1.0;
  s.tau = s.nu / (2.0 * mu_g);
  s.sigma = s.nu / (2.0 * mu_f);
  s.theta = 1.0 / (1.0 + s.nu);
  s.x_bar = x0;
  s.x = std::move(x0);
  s.y = std::move(y0);
  return s;
}

PdhgState pdhg_init(const SaddleSpec& spec, Tensor x0, Tensor y0) {
  require_dims(x0, spec.k_op.in_dims(), "pdhg_init x0");
  require_dims(y0, spec.k_op.out_dims(), "pdhg_init y0");
  return pdhg_init(spec.g->mu(), spec.fstar->mu(), spec.k_op.norm_est(), std::move(x0),
                   std::move(y0));
}

namespace {

void step(PdhgState& s, const LinOp& k, const std::function<Tensor(double, const Tensor&)>& prox_x,
          const std::function<Tensor(double, const Tensor&)>& prox_y) {
  Tensor ky = s.y;
  ky.axpy(s.sigma, k.apply(s.x_bar));
  s.y = prox_y(s.sigma, ky);
  Tensor kx = s.x;
  kx.axpy(-s.tau, k.adjoint_apply(s.y));
  Tensor x_new = prox_x(s.tau, kx);
  s.x_bar = x_new;
  s.x_bar.axpy(s.theta, x_new - s.x);
  s.x = std::move(x_new);
  ++s.iter;
}

}  // namespace

void pdhg_iterate(PdhgState& state, const SaddleSpec& spec) {
  step(state, spec.k_op, [&](double t, const Tensor& p) { return spec.g->prox(t, p); },
       [&](double t, const Tensor& p) { return spec.fstar->prox(t, p); });
  if (!all_finite(state.x) || !all_finite(state.y))
    throw DivergenceError("pdhg_iterate: non-finite iterate");
}

double primal_residual_bound(const SaddleSpec& spec, const Tensor& x) {
  const Tensor shift = spec.k_op.adjoint_apply(spec.fstar->conj_grad(spec.k_op.apply(x)));
  return norm(spec.g->subgrad_residual(x, shift)) / spec.g->mu();
}

double dual_residual_bound(const SaddleSpec& spec, const Tensor& y) {
  const Tensor gx = spec.g->conj_grad(spec.k_op.adjoint_apply(y) * -1.0);
  return norm(spec.fstar->subgrad_residual(y, spec.k_op.apply(gx) * -1.0)) / spec.fstar->mu();
}

SolveResult run_pdhg(const PdhgProblem& prob, double eps_x, double eps_y, Tensor x0, Tensor y0,
                     long max_iter, int check_every) {
  if (!(eps_x > 0.0) || !(eps_y > 0.0))
    throw ParameterError(std::string(prob.label) + ": tolerances must be > 0");
  if (check_every < 1) throw ParameterError("check_every must be >= 1");
  PdhgState s = pdhg_init(prob.mu_x, prob.mu_y, prob.k_op.norm_est(), std::move(x0), std::move(y0));
  double best_x = std::numeric_limits<double>::infinity();
  double best_y = best_x;
  while (true) {
    if (s.iter % check_every == 0 || s.iter == max_iter) {
      if (!all_finite(s.x) || !all_finite(s.y))
        throw DivergenceError(std::string(prob.label) + ": non-finite iterate at iteration " +
                              std::to_string(s.iter));
      const double bx = prob.bound_x(s.x);
      const double by = prob.bound_y(s.y);
      best_x = std::min(best_x, bx);
      best_y = std::min(best_y, by);
      if (bx <= eps_x && by <= eps_y) {
        SolveResult r;
        r.x = s.x;
        r.y = s.y;
        r.iters = s.iter;
        r.bound_x = bx;
        r.bound_y = by;
        r.state = std::move(s);
        return r;
      }
      if (s.iter >= max_iter)
        throw ToleranceNotReached(std::string(prob.label) + ": " + std::to_string(max_iter) +
                                      " iterations without reaching the tolerances",
                                  best_x, best_y);
    }
    step(s, prob.k_op, prob.prox_x, prob.prox_y);
  }
}

SolveResult solve_saddle(const SaddleSpec& spec, double eps_x, double eps_y,
                         const std::optional<PdhgState>& warm, long max_iter) {
  Tensor x0 = warm ? warm->x : Tensor(spec.k_op.in_dims());
  Tensor y0 = warm ? warm->y : Tensor(spec.k_op.out_dims());
  require_dims(x0, spec.k_op.in_dims(), "solve_saddle warm x");
  require_dims(y0, spec.k_op.out_dims(), "solve_saddle warm y");
  PdhgProblem prob{spec.k_op,
                   spec.g->mu(),
                   spec.fstar->mu(),
                   [&](double t, const Tensor& p) { return spec.g->prox(t, p); },
                   [&](double t, const Tensor& p) { return spec.fstar->prox(t, p); },
                   [&](const Tensor& x) { return primal_residual_bound(spec, x); },
                   [&](const Tensor& y) { return dual_residual_bound(spec, y); },
                   "solve_saddle"};
  return run_pdhg(prob, eps_x, eps_y, std::move(x0), std::move(y0), max_iter);
}

}  // namespace bilevel
