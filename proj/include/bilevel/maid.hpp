#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bilevel/hypergrad.hpp"

namespace bilevel {

struct MaidConfig {
  double rho_down = 0.5;
  double rho_up = 10.0 / 9.0;
  double nu_down = 0.5;
  double nu_up = 1.05;
  int max_bt = 5;
  double lambda = 1e-4;
  double alpha0 = 1e-2;
  Tolerances tol0{1e-2, 1e-2, 1e-2, 1e-2};
  int max_outer = 50;
  /// Total lower-level iterations allowed; negative means unlimited.
  long budget_cap = -1;
  /// Smallest tolerance the schedule may reach before giving up.
  double tol_floor = 1e-12;
  /// false: fixed alpha and tolerances, every step accepted.
  bool adaptive = true;
  long max_lower_iter = kDefaultMaxIter;

  void validate() const;
};

struct LogRow {
  int t = 0;
  int attempt = 0;
  double alpha = 0.0;
  Tolerances tol;
  double loss_upper_bound = 0.0;
  double grad_norm = 0.0;
  double bound_theta = 0.0;
  double psi = 0.0;
  bool accepted = false;
  long cumulative_lower_iters = 0;
};

struct AcceptedStep {
  int t = 0;
  double alpha = 0.0;
  double z_norm_sq = 0.0;
  Tensor theta_before;
  Tensor theta_after;
  Tolerances tol_before;
};

enum class MaidStop { MaxOuter, Budget, Stagnation };

struct MaidResult {
  Tensor theta;
  std::vector<LogRow> history;
  std::vector<AcceptedStep> steps;
  Tensor first_z;
  Tolerances tol;
  double alpha = 0.0;
  long lower_iters = 0;
  int successes = 0;
  int failed_rounds = 0;
  bool heuristic = false;
  MaidStop stop = MaidStop::MaxOuter;
  std::string diagnostic;
};

/// l(u_new) + |grad l(u_new)| eps + (L/2) eps^2 - l(u_old) + |grad l(u_old)| eps
///   + lambda alpha |z|^2
double psi_value(double loss_new, double grad_norm_new, double loss_old, double grad_norm_old,
                 double eps_bar, double l_smooth_sum, double lambda, double alpha, double z_norm_sq);

using RowCallback = std::function<void(const LogRow&)>;

MaidResult maid_run(const MaidConfig& config, const Problem& problem, const Tensor& theta0,
                    const std::vector<TrainingPair>& samples, const RowCallback& on_row = {});

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const LogRow& row);

}  // namespace bilevel
