#pragma once

#include <functional>
#include <optional>

#include "bilevel/fun.hpp"
#include "bilevel/linop.hpp"

namespace bilevel {

/// min_x max_y <Kx, y> + g(x) - f*(y)
struct SaddleSpec {
  SaddleSpec(LinOp k, BundlePtr g, BundlePtr fstar);

  LinOp k_op;
  BundlePtr g;
  BundlePtr fstar;
};

struct PdhgState {
  Tensor x;
  Tensor y;
  Tensor x_bar;
  double tau = 0.0;
  double sigma = 0.0;
  double theta = 0.0;
  double nu = 0.0;
  long iter = 0;
};

inline constexpr int kCheckEvery = 10;
inline constexpr double kNuSafety = 0.99;

/// Strongly convex constant-step rule: nu = 0.99 * 2 sqrt(mu_g mu_f) / k_norm
/// (nu = 1 when k_norm == 0), tau = nu / (2 mu_g), sigma = nu / (2 mu_f),
/// theta = 1 / (1 + nu).
PdhgState pdhg_init(double mu_g, double mu_f, double k_norm, Tensor x0, Tensor y0);
PdhgState pdhg_init(const SaddleSpec& spec, Tensor x0, Tensor y0);

void pdhg_iterate(PdhgState& state, const SaddleSpec& spec);

/// ||min-norm of dg(x) + K* grad f(Kx)|| / mu_g >= ||x - x_hat||
double primal_residual_bound(const SaddleSpec& spec, const Tensor& x);
/// ||min-norm of df*(y) - K grad g*(-K* y)|| / mu_f* >= ||y - y_hat||
double dual_residual_bound(const SaddleSpec& spec, const Tensor& y);

struct SolveResult {
  Tensor x;
  Tensor y;
  long iters = 0;
  double bound_x = 0.0;
  double bound_y = 0.0;
  PdhgState state;
};

/// Any problem PDHG can run on: operator, the two prox maps and the
/// certified distance bounds used as stopping test.
struct PdhgProblem {
  LinOp k_op;
  double mu_x;
  double mu_y;
  std::function<Tensor(double, const Tensor&)> prox_x;
  std::function<Tensor(double, const Tensor&)> prox_y;
  std::function<double(const Tensor&)> bound_x;
  std::function<double(const Tensor&)> bound_y;
  const char* label = "pdhg";
};

/// Runs PDHG from (x0, y0) until bound_x <= eps_x and bound_y <= eps_y,
/// testing at iteration 0 and every check_every iterations after.
/// Throws ToleranceNotReached after max_iter iterations.
SolveResult run_pdhg(const PdhgProblem& prob, double eps_x, double eps_y, Tensor x0, Tensor y0,
                     long max_iter, int check_every = kCheckEvery);

inline constexpr long kDefaultMaxIter = 2'000'000;

/// Warm start uses warm->x and warm->y; zeros otherwise.
SolveResult solve_saddle(const SaddleSpec& spec, double eps_x, double eps_y,
                         const std::optional<PdhgState>& warm = std::nullopt,
                         long max_iter = kDefaultMaxIter);

}  // namespace bilevel
