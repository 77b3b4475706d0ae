#pragma once

#include <optional>
#include <vector>

#include "bilevel/adjoint.hpp"
#include "bilevel/problems.hpp"

namespace bilevel {

struct Tolerances {
  double eps_x = 1e-2;
  double eps_y = 1e-2;
  double delta_X = 1e-2;
  double delta_Y = 1e-2;

  Tolerances scaled(double s) const { return {eps_x * s, eps_y * s, delta_X * s, delta_Y * s}; }
  double max() const;
};

struct BoundConstants {
  double cx1 = 0.0, cx2 = 0.0, cy1 = 0.0, cy2 = 0.0;
};

BoundConstants bound_constants(const FunctionBundle& g, const FunctionBundle& fstar,
                               const LossBundle& loss1, const LossBundle& loss2, double k_norm,
                               const Tensor& x_tilde, const Tensor& y_tilde, const Tensor& X_tilde,
                               const Tensor& Y_tilde);

/// Error bound on ||z - grad L(K)|| in operator coordinates. Besides the
/// first- and second-order tolerance terms this includes the mixed term
/// (cx1 + cy2) eps_x eps_y produced by expanding ||X_hat|| and ||Y_hat||.
double hypergradient_bound(const BoundConstants& c, const Tolerances& tol, const Tensor& x_tilde,
                           const Tensor& y_tilde, const Tensor& X_tilde, const Tensor& Y_tilde);

/// ||X~ - X_hat|| <= cx1 eps_x + cx2 eps_y + delta_X, and the Y analogue.
double adjoint_distance_bound_X(const BoundConstants& c, const Tolerances& tol);
double adjoint_distance_bound_Y(const BoundConstants& c, const Tolerances& tol);

struct PiggybackWarm {
  std::optional<PdhgState> primal;
  std::optional<PdhgState> adjoint;
};

/// Lower-level solve with the loss terms evaluated at the result.
struct LowerSolve {
  std::optional<ProblemInstance> instance;
  SolveResult solve;
  double loss = 0.0;
  double loss_grad_norm = 0.0;
  double l_smooth = 0.0;
};

LowerSolve solve_lower(const Problem& problem, const Tensor& theta, const TrainingPair& sample,
                       double eps_x, double eps_y, const std::optional<PdhgState>& warm,
                       long max_iter = kDefaultMaxIter);

struct PiggybackResult {
  Tensor x_tilde, y_tilde, X_tilde, Y_tilde;
  Tensor z_theta;
  double bound_operator = 0.0;
  double bound_theta = 0.0;
  double param_norm = 0.0;
  double bound_X = 0.0;  // intermediate ||X~ - X_hat|| bound
  double bound_Y = 0.0;
  BoundConstants consts;
  Tolerances tol;
  long saddle_iters = 0;
  long adjoint_iters = 0;
  long lower_iters = 0;
  double loss = 0.0;
  double loss_grad_norm = 0.0;
  double l_smooth = 0.0;
  /// Bounds rest on surrogate or heuristic constants.
  bool heuristic = false;
  PdhgState primal_state;
  PdhgState adjoint_state;

  PiggybackWarm warm() const { return {primal_state, adjoint_state}; }
};

PiggybackResult inexact_piggyback(const Problem& problem, const Tensor& theta,
                                  const TrainingPair& sample, const Tolerances& tol,
                                  const PiggybackWarm& warm = {}, long max_iter = kDefaultMaxIter);

/// Same as inexact_piggyback but starting from an already computed
/// lower-level solve at the given tolerances.
PiggybackResult piggyback_from(const Problem& problem, const Tensor& theta,
                               const TrainingPair& sample, const Tolerances& tol,
                               LowerSolve lower, const std::optional<PdhgState>& adjoint_warm,
                               long max_iter = kDefaultMaxIter);

struct BatchResult {
  Tensor z_theta;
  double bound = 0.0;
  long lower_iters = 0;
  double loss = 0.0;            // mean l(u)
  double loss_grad_norm = 0.0;  // mean ||grad l(u)||
  double l_smooth = 0.0;
  bool heuristic = false;
  std::vector<PiggybackResult> per_sample;

  std::vector<PiggybackWarm> warms() const;
};

/// Mean hypergradient and mean bound over the samples, in index order.
/// `warms` may be empty or hold one entry per sample.
BatchResult batch_hypergradient(const Problem& problem, const Tensor& theta,
                                const std::vector<TrainingPair>& samples, const Tolerances& tol,
                                const std::vector<PiggybackWarm>& warms = {},
                                long max_iter = kDefaultMaxIter);

}  // namespace bilevel
