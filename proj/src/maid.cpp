#include "bilevel/maid.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "bilevel/errors.hpp"

namespace bilevel {

void MaidConfig::validate() const {
  if (!(rho_down > 0.0 && rho_down < 1.0)) throw ParameterError("rho_down must lie in (0, 1)");
  if (!(rho_up > 1.0)) throw ParameterError("rho_up must be > 1");
  if (!(nu_down > 0.0 && nu_down < 1.0)) throw ParameterError("nu_down must lie in (0, 1)");
  if (!(nu_up > 1.0)) throw ParameterError("nu_up must be > 1");
  if (max_bt < 1) throw ParameterError("max_bt must be >= 1");
  if (!(alpha0 > 0.0)) throw ParameterError("alpha0 must be > 0");
  if (!(tol0.eps_x > 0.0 && tol0.eps_y > 0.0 && tol0.delta_X > 0.0 && tol0.delta_Y > 0.0))
    throw ParameterError("initial tolerances must be > 0");
  if (max_outer < 0) throw ParameterError("max_outer must be >= 0");
  if (!(tol_floor > 0.0)) throw ParameterError("tol_floor must be > 0");
}

double psi_value(double loss_new, double grad_norm_new, double loss_old, double grad_norm_old,
                 double eps_bar, double l_smooth_sum, double lambda, double alpha, double z_norm_sq) {
  return loss_new + grad_norm_new * eps_bar + 0.5 * l_smooth_sum * eps_bar * eps_bar - loss_old +
         grad_norm_old * eps_bar + lambda * alpha * z_norm_sq;
}

namespace {

struct Candidate {
  std::vector<LowerSolve> lowers;
  double loss = 0.0;
  double grad_norm = 0.0;
  long iters = 0;
};

class Runner {
 public:
  Runner(const MaidConfig& c, const Problem& p, const std::vector<TrainingPair>& s, const RowCallback& cb)
      : cfg_(c), problem_(p), samples_(s), on_row_(cb) {}

  MaidResult run(const Tensor& theta0) {
    cfg_.validate();
    if (samples_.empty()) throw ParameterError("maid_run: no samples");
    res_.theta = problem_.project_theta(theta0);
    res_.tol = cfg_.tol0;
    res_.alpha = cfg_.alpha0;
    if (out_of_budget()) return finish(MaidStop::Budget, "budget exhausted before the first solve");
    BatchResult hyper = fresh_batch(res_.theta, {});
    res_.first_z = hyper.z_theta;
    return cfg_.adaptive ? adaptive(std::move(hyper)) : fixed(std::move(hyper));
  }

 private:
  bool out_of_budget() const { return cfg_.budget_cap >= 0 && res_.lower_iters >= cfg_.budget_cap; }

  MaidResult finish(MaidStop stop, std::string why) {
    res_.stop = stop;
    res_.diagnostic = std::move(why);
    return std::move(res_);
  }

  BatchResult fresh_batch(const Tensor& theta, const std::vector<PiggybackWarm>& warms) {
    BatchResult b = batch_hypergradient(problem_, theta, samples_, res_.tol, warms, cfg_.max_lower_iter);
    res_.lower_iters += b.lower_iters;
    res_.heuristic = res_.heuristic || b.heuristic;
    return b;
  }

  // Hypergradient at an accepted candidate, reusing its lower-level solves.
  BatchResult batch_from(const Tensor& theta, Candidate cand, const BatchResult& prev) {
    BatchResult b;
    b.z_theta = Tensor(problem_.theta_dims());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      LowerSolve lower = std::move(cand.lowers[i]);
      lower.solve.iters = 0;  // already charged to the budget
      b.per_sample.push_back(piggyback_from(problem_, theta, samples_[i], res_.tol, std::move(lower),
                                            prev.per_sample[i].adjoint_state, cfg_.max_lower_iter));
      const PiggybackResult& r = b.per_sample.back();
      b.z_theta += r.z_theta;
      b.bound += r.bound_theta;
      b.lower_iters += r.lower_iters;
      b.loss += r.loss;
      b.loss_grad_norm += r.loss_grad_norm;
      b.l_smooth = std::max(b.l_smooth, r.l_smooth);
      b.heuristic = b.heuristic || r.heuristic;
    }
    const double inv = 1.0 / static_cast<double>(samples_.size());
    b.z_theta *= inv;
    b.bound *= inv;
    b.loss *= inv;
    b.loss_grad_norm *= inv;
    res_.lower_iters += b.lower_iters;
    res_.heuristic = res_.heuristic || b.heuristic;
    return b;
  }

  Candidate solve_candidate(const Tensor& theta, const Tolerances& tol, const BatchResult& from) {
    Candidate c;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      c.lowers.push_back(solve_lower(problem_, theta, samples_[i], tol.eps_x, tol.eps_y,
                                     from.per_sample[i].primal_state, cfg_.max_lower_iter));
      c.loss += c.lowers.back().loss;
      c.grad_norm += c.lowers.back().loss_grad_norm;
      c.iters += c.lowers.back().solve.iters;
    }
    const double inv = 1.0 / static_cast<double>(samples_.size());
    c.loss *= inv;
    c.grad_norm *= inv;
    res_.lower_iters += c.iters;
    return c;
  }

  void log(LogRow row) {
    row.cumulative_lower_iters = res_.lower_iters;
    res_.history.push_back(row);
    if (on_row_) on_row_(row);
  }

  MaidResult adaptive(BatchResult hyper) {
    for (int t = 0; t < cfg_.max_outer; ++t) {
      int attempt = 0;
      bool accepted = false;
      for (int j = cfg_.max_bt; !accepted; ++j) {
        const double z2 = norm_sq(hyper.z_theta);
        for (int i = 0; i < j; ++i, ++attempt) {
          if (out_of_budget()) return finish(MaidStop::Budget, "lower-level budget exhausted");
          Tensor cand_theta = res_.theta;
          cand_theta.axpy(-res_.alpha, hyper.z_theta);
          cand_theta = problem_.project_theta(std::move(cand_theta));
          const Tolerances next = res_.tol.scaled(cfg_.nu_up);
          Candidate cand = solve_candidate(cand_theta, next, hyper);
          const double eps_bar =
              std::max({res_.tol.eps_x, res_.tol.eps_y, next.eps_x, next.eps_y});
          const double lsum = hyper.l_smooth;
          const double psi = psi_value(cand.loss, cand.grad_norm, hyper.loss, hyper.loss_grad_norm,
                                       eps_bar, lsum, cfg_.lambda, res_.alpha, z2);
          LogRow row;
          row.t = t;
          row.attempt = attempt;
          row.alpha = res_.alpha;
          row.tol = res_.tol;
          row.loss_upper_bound = cand.loss + cand.grad_norm * eps_bar + 0.5 * lsum * eps_bar * eps_bar;
          row.grad_norm = std::sqrt(z2);
          row.bound_theta = hyper.bound;
          row.psi = psi;
          row.accepted = psi <= 0.0;
          if (!row.accepted) {
            log(row);
            res_.alpha *= cfg_.rho_down;
            continue;
          }
          res_.steps.push_back({t, res_.alpha, z2, res_.theta, cand_theta, res_.tol});
          res_.theta = std::move(cand_theta);
          res_.tol = next;
          res_.alpha *= cfg_.rho_up;
          ++res_.successes;
          log(row);
          hyper = batch_from(res_.theta, std::move(cand), hyper);
          accepted = true;
          break;
        }
        if (accepted) break;
        res_.tol = res_.tol.scaled(cfg_.nu_down);
        ++res_.failed_rounds;
        const double smallest = std::min({res_.tol.eps_x, res_.tol.eps_y, res_.tol.delta_X, res_.tol.delta_Y});
        if (smallest < cfg_.tol_floor)
          return finish(MaidStop::Stagnation,
                        "tolerances fell below " + std::to_string(cfg_.tol_floor) +
                            " without a certified descent step at t = " + std::to_string(t));
        if (out_of_budget()) return finish(MaidStop::Budget, "lower-level budget exhausted");
        hyper = fresh_batch(res_.theta, hyper.warms());
      }
    }
    return finish(MaidStop::MaxOuter, "reached max_outer");
  }

  MaidResult fixed(BatchResult hyper) {
    const double eps_bar = std::max(res_.tol.eps_x, res_.tol.eps_y);
    for (int t = 0; t < cfg_.max_outer; ++t) {
      if (out_of_budget()) return finish(MaidStop::Budget, "lower-level budget exhausted");
      const double z2 = norm_sq(hyper.z_theta);
      Tensor next_theta = res_.theta;
      next_theta.axpy(-res_.alpha, hyper.z_theta);
      next_theta = problem_.project_theta(std::move(next_theta));
      BatchResult next = fresh_batch(next_theta, hyper.warms());
      LogRow row;
      row.t = t;
      row.alpha = res_.alpha;
      row.tol = res_.tol;
      row.loss_upper_bound =
          next.loss + next.loss_grad_norm * eps_bar + 0.5 * next.l_smooth * eps_bar * eps_bar;
      row.grad_norm = std::sqrt(z2);
      row.bound_theta = hyper.bound;
      row.psi = psi_value(next.loss, next.loss_grad_norm, hyper.loss, hyper.loss_grad_norm, eps_bar,
                          hyper.l_smooth, cfg_.lambda, res_.alpha, z2);
      row.accepted = true;
      res_.steps.push_back({t, res_.alpha, z2, res_.theta, next_theta, res_.tol});
      res_.theta = std::move(next_theta);
      ++res_.successes;
      log(row);
      hyper = std::move(next);
    }
    return finish(MaidStop::MaxOuter, "reached max_outer");
  }

  MaidConfig cfg_;
  const Problem& problem_;
  const std::vector<TrainingPair>& samples_;
  const RowCallback& on_row_;
  MaidResult res_;
};

}  // namespace

MaidResult maid_run(const MaidConfig& config, const Problem& problem, const Tensor& theta0,
                    const std::vector<TrainingPair>& samples, const RowCallback& on_row) {
  require_dims(theta0, problem.theta_dims(), "maid_run theta0");
  return Runner(config, problem, samples, on_row).run(theta0);
}

void write_log_header(std::ostream& os) {
  os << "t,attempt,alpha,eps_x,eps_y,delta_X,delta_Y,loss_upper_bound,grad_norm,bound_theta,psi,"
        "accepted,cumulative_lower_iters\n";
}

void write_log_row(std::ostream& os, const LogRow& r) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(17) << r.t << ',' << r.attempt << ',' << r.alpha << ',' << r.tol.eps_x << ','
     << r.tol.eps_y << ',' << r.tol.delta_X << ',' << r.tol.delta_Y << ',' << r.loss_upper_bound << ','
     << r.grad_norm << ',' << r.bound_theta << ',' << r.psi << ',' << (r.accepted ? 1 : 0) << ','
     << r.cumulative_lower_iters << '\n';
  os.flush();
  os.flags(flags);
  os.precision(prec);
}

}  // namespace bilevel
