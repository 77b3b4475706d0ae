// Acceptance checks, one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.
#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>

#include "bilevel/errors.hpp"
#include "bilevel/imaging.hpp"
#include "bilevel/maid.hpp"
#include "bilevel/rng.hpp"
#include "commands.hpp"

using namespace bilevel;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

TrainingPair random_pair(std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor clean = random_normal({h, w}, seed, 0.5);
  return {clean, clean + random_normal({h, w}, seed + 1, 0.2)};
}

double dense_loss(const Problem& p, const Tensor& theta, const std::vector<TrainingPair>& set) {
  double s = 0.0;
  for (const auto& pair : set) s += quadratic_exact(p, theta, pair).loss;
  return s / static_cast<double>(set.size());
}

struct QuadCase {
  ProblemPtr problem;
  Tensor theta;
  TrainingPair sample;
};

QuadCase quad_case(std::size_t side, std::uint64_t seed) {
  Xoshiro256 r(seed * 7919 + side);
  const double mg = 0.5 + 1.5 * r.uniform(), mf = 0.5 + 1.5 * r.uniform();
  const std::size_t k = side == 1 ? 1 : 3, n = 1 + seed % 2;
  ProblemPtr p = quadratic_make(mg, mf, n, k, k);
  return {p, random_normal(p->theta_dims(), seed + 11, 0.5), random_pair(side, side, seed + 101)};
}

// 1. Hypergradient bound against dense closed-form hypergradients.
Outcome bound_soundness() {
  const std::vector<double> grid{1e-2, 1e-4, 1e-6};
  long cases = 0, sound = 0;
  double worst = 0.0;
  for (std::size_t side : {1, 4, 8}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const QuadCase qc = quad_case(side, seed);
      const Tensor exact = quadratic_exact_hypergradient(*qc.problem, qc.theta, qc.sample);
      for (double ex : grid) {
        for (double ey : grid) {
          const LowerSolve lower = solve_lower(*qc.problem, qc.theta, qc.sample, ex, ey, std::nullopt);
          for (double dx : grid) {
            for (double dy : grid) {
              const PiggybackResult r =
                  piggyback_from(*qc.problem, qc.theta, qc.sample, {ex, ey, dx, dy}, lower, std::nullopt);
              const double err = norm(r.z_theta - exact);
              ++cases;
              sound += err <= r.bound_theta;
              worst = std::max(worst, err / r.bound_theta);
            }
          }
        }
      }
    }
  }
  return {sound == cases, fmt("%.0f/%.0f cases sound, max error/bound %.3g", sound, cases, worst)};
}

// 2. Solver outputs against dense references.
Outcome solver_soundness() {
  long cases = 0, ok = 0;
  double worst = 0.0;
  for (std::size_t side : {1, 4, 8, 16}) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const QuadCase qc = quad_case(side, seed);
      Xoshiro256 r(seed + 31 * side);
      auto pick = [&] { return std::pow(10.0, -2.0 - 5.0 * r.uniform()); };
      const Tolerances tol{pick(), pick(), pick(), pick()};
      const QuadraticExact ex = quadratic_exact(*qc.problem, qc.theta, qc.sample);
      const PiggybackResult pr = inexact_piggyback(*qc.problem, qc.theta, qc.sample, tol);
      // Reference adjoint at the inexact primal-dual point: only the loss
      // gradient in the right-hand side changes for quadratics.
      TrainingPair shifted = qc.sample;
      shifted.clean = qc.sample.clean - (pr.x_tilde - ex.x_hat);
      const QuadraticExact bar = quadratic_exact(*qc.problem, qc.theta, shifted);
      const double r1 = norm(pr.x_tilde - ex.x_hat) / tol.eps_x, r2 = norm(pr.y_tilde - ex.y_hat) / tol.eps_y;
      const double r3 = norm(pr.X_tilde - bar.X_hat) / tol.delta_X, r4 = norm(pr.Y_tilde - bar.Y_hat) / tol.delta_Y;
      const double m = std::max({r1, r2, r3, r4});
      ++cases;
      ok += m <= 1.0;
      worst = std::max(worst, m);
    }
  }
  return {ok == cases, fmt("%.0f/%.0f solves within tolerance, max distance/tolerance %.3g", ok, cases, worst)};
}

// 3. Finite differences on the smoothed FoE and TV problems.
Outcome finite_differences() {
  const double h = 1e-5, tol = 1e-8, fd_tol = 1e-10;
  double worst = 0.0;
  std::string per;
  FoeOptions foe;
  TvOptions tv;
  for (ProblemPtr p : {foe_make(foe), tvdisc_make(tv)}) {
    const Image clean = synthetic_image(16, 16, 5);
    const Image noisy = add_gaussian_noise(clean, 25.5, 6);
    const TrainingPair s{clean.pixels * (1.0 / 255.0), noisy.pixels * (1.0 / 255.0)};
    const Tensor theta = p->initial_theta(3) * 3.0;
    const PiggybackResult r = inexact_piggyback(*p, theta, s, {tol, tol, tol, tol});
    const LowerSolve centre = solve_lower(*p, theta, s, fd_tol, fd_tol, r.primal_state);
    double w = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
      Tensor dir = random_normal(p->theta_dims(), 500 + k);
      dir *= 1.0 / norm(dir);
      const double lp = solve_lower(*p, theta + h * dir, s, fd_tol, fd_tol, centre.solve.state).loss;
      const double lm = solve_lower(*p, theta - h * dir, s, fd_tol, fd_tol, centre.solve.state).loss;
      const double fd = (lp - lm) / (2 * h);
      w = std::max(w, std::abs(fd - dot(r.z_theta, dir)) / std::abs(fd));
    }
    per += p->kind() + fmt(" %.2e ", w);
    worst = std::max(worst, w);
  }
  return {worst <= 1e-3, "max relative error: " + per};
}

// 4. Adjoint identity of every shipped operator.
Outcome adjoint_identities() {
  std::vector<std::pair<std::string, LinOp>> list;
  const std::size_t h = 9, w = 7;
  list.emplace_back("identity", ops::identity({h, w}));
  list.emplace_back("scaling", ops::scaling({h, w}, -2.5));
  list.emplace_back("zero", ops::zero({h, w}, {5}));
  list.emplace_back("diff1d", ops::forward_diff_1d(13));
  list.emplace_back("diff2d", ops::forward_diff_2d(h, w));
  list.emplace_back("scaled", ops::scaled(ops::forward_diff_2d(h, w), 0.3));
  list.emplace_back("compose", ops::compose(ops::scaling({2, h, w}, 2.0), ops::forward_diff_2d(h, w)));
  list.emplace_back("adjoint_of", ops::adjoint_of(ops::forward_diff_2d(h, w)));
  list.emplace_back("row_stack", ops::row_stack({ops::identity({h, w}), ops::forward_diff_2d(h, w)}));
  list.emplace_back("col_stack", ops::col_stack({ops::identity({h, w}), ops::scaling({h, w}, 3.0)}));
  list.emplace_back("block", ops::block({{ops::identity({h, w}), std::nullopt},
                                         {ops::forward_diff_2d(h, w), ops::scaling({2, h, w}, -1.0)}}));
  const ConvParametrization per(3, 5, 5), sum(2, 3, 3, 3, ConvMode::ChannelSum), two(4, 5, 5, 2);
  list.emplace_back("conv", per.op(random_normal(per.theta_dims(), 1), h, w));
  list.emplace_back("conv_channel_sum", sum.op(random_normal(sum.theta_dims(), 2), h, w));
  list.emplace_back("conv_two_channel", two.op(random_normal(two.theta_dims(), 3), h, w));
  TvOptions tv;
  FoeOptions foe;
  IcnnOptions icnn;
  for (ProblemPtr p : {quadratic_make(1, 1, 2, 3, 3), tvdisc_make(tv), foe_make(foe), icnn2_make(icnn)}) {
    const ProblemInstance inst = p->build(p->project_theta(p->initial_theta(4)), random_pair(h, w, 5));
    list.emplace_back(p->kind(), inst.spec.k_op);
  }
  double worst = 0.0;
  std::string name;
  for (const auto& [n, k] : list) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Tensor x = random_normal(k.in_dims(), 1000 + s), y = random_normal(k.out_dims(), 5000 + s);
      const double gap = std::abs(dot(k.apply(x), y) - dot(x, k.adjoint_apply(y))) / (norm(x) * norm(y));
      if (gap > worst) {
        worst = gap;
        name = n;
      }
    }
  }
  // The kernel gradient is the adjoint of theta -> K(theta) x.
  for (const ConvParametrization* p : {&per, &sum, &two}) {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Tensor x = random_normal(p->input_dims(h, w), 9000 + s), y = random_normal(p->output_dims(h, w), 9500 + s);
      const Tensor t = random_normal(p->theta_dims(), 9900 + s);
      const double gap = std::abs(dot(p->op(t, h, w).apply(x), y) - dot(t, p->kernel_gradient(x, y))) /
                         (norm(t) * norm(x) * norm(y));
      if (gap > worst) {
        worst = gap;
        name = "kernel_gradient";
      }
    }
  }
  return {worst <= 1e-10, fmt("%.0f operators, worst relative gap %.2e", static_cast<double>(list.size() + 3), worst) +
                              (name.empty() ? "" : " (" + name + ")")};
}

// 5. MAID descent and tolerance schedule on the quadratic problem.
Outcome maid_descent() {
  ProblemPtr p = quadratic_make(1.0, 1.0, 3, 5, 5);
  std::vector<TrainingPair> set;
  for (std::uint64_t k = 0; k < 3; ++k) set.push_back(random_pair(8, 8, 40 + 2 * k));
  MaidConfig c;
  c.max_outer = 50;
  // Small enough that the psi slack stays below the decrease for 50 steps.
  c.tol0 = {1e-8, 1e-8, 1e-8, 1e-8};
  c.alpha0 = 200.0;  // overshoots at first, so the failed-round branch is exercised
  const Tensor theta0 = p->initial_theta(7);
  const MaidResult r = maid_run(c, *p, theta0, set);
  int violations = 0;
  for (const auto& s : r.steps) {
    const double drop = dense_loss(*p, s.theta_after, set) - dense_loss(*p, s.theta_before, set);
    violations += drop > -c.lambda * s.alpha * s.z_norm_sq;
  }
  // Replay the schedule: rounds of max_bt, max_bt + 1, ... attempts per t.
  int successes = 0, failed = 0, rejects = 0, schedule_errors = 0, last_t = -1, in_round = 0, round_len = 0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  for (const LogRow& row : r.history) {
    if (row.t != last_t) {
      last_t = row.t;
      in_round = 0;
      round_len = c.max_bt;
    }
    const double scale = std::pow(c.nu_up, successes) * std::pow(c.nu_down, failed);
    const double a = c.alpha0 * std::pow(c.rho_up, successes) * std::pow(c.rho_down, rejects);
    schedule_errors += rel(row.tol.eps_x, c.tol0.eps_x * scale) > 1e-12 ||
                       rel(row.tol.eps_y, c.tol0.eps_y * scale) > 1e-12 ||
                       rel(row.tol.delta_X, c.tol0.delta_X * scale) > 1e-12 ||
                       rel(row.tol.delta_Y, c.tol0.delta_Y * scale) > 1e-12 || rel(row.alpha, a) > 1e-12;
    if (row.accepted) {
      ++successes;
      continue;
    }
    ++rejects;
    if (++in_round == round_len) {
      ++failed;
      in_round = 0;
      ++round_len;
    }
  }
  const bool pass = r.stop == MaidStop::MaxOuter && r.successes == 50 && violations == 0 && schedule_errors == 0 &&
                    failed == r.failed_rounds;
  return {pass, fmt("%.0f accepted steps, %.0f descent violations, %.0f schedule mismatches, %.0f failed rounds",
                    r.successes, violations, schedule_errors, r.failed_rounds) +
                    fmt(", loss %.6g -> %.6g", dense_loss(*p, theta0, set), dense_loss(*p, r.theta, set))};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream f(path);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(f, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// 6. Desk-scale learned TV discretisation through the train command.
Outcome tv_learning() {
  const fs::path dir = fs::current_path() / "acceptance_tv";
  fs::remove_all(dir);
  cli::RunConfig cfg = cli::parse_config(R"({
    "problem": "tvdisc", "n_filters": 8, "kernel_h": 5, "kernel_w": 5,
    "synthetic_count": 4, "synthetic_test_count": 2, "synthetic_height": 32, "synthetic_width": 32,
    "noise_sigma": 25.5, "seed": 10, "alpha0": 1e-2, "tol0": 1e-3, "max_outer": 15})");
  cfg.out = dir.string();
  std::ostringstream log;
  const int code = cli::cmd_train(cfg, log);
  std::printf("%s", log.str().c_str());

  const auto budget = read_csv(dir / "budget.csv");
  bool decreasing = budget.size() >= 3;
  for (std::size_t i = 2; i < budget.size(); ++i) decreasing = decreasing && std::stod(budget[i][1]) < std::stod(budget[i - 1][1]);
  const long spent = budget.size() > 1 ? std::stol(budget.back()[0]) : 0;

  const ProblemPtr problem = cli::make_problem(cfg);
  const Tensor theta = read_f64t(dir / "filters.f64t");
  double noisy = 0.0, recon = 0.0;
  const auto test = cli::test_set(cfg);
  for (const auto& s : test) {
    noisy += psnr(s.corrupted, s.clean, 1.0);
    const LowerSolve l = solve_lower(*problem, theta, s, 1e-6, 1e-6, std::nullopt);
    recon += psnr(problem->image_of(l.solve.x, 32, 32), s.clean, 1.0);
  }
  noisy /= test.size();
  recon /= test.size();

  // Baseline: fixed alpha and tolerances for the same lower-level budget.
  MaidConfig fixed = cfg.maid;
  fixed.adaptive = false;
  fixed.alpha0 = 1e-2;
  fixed.tol0 = {1e-2, 1e-2, 1e-2, 1e-2};
  fixed.max_outer = 1 << 30;
  fixed.budget_cap = spent;
  std::ofstream base(dir / "budget_fixed.csv");
  base << "cumulative_lower_iters,loss_upper_bound\n";
  int oscillations = 0;
  double prev = INFINITY;
  const MaidResult rf = maid_run(fixed, *problem, cli::initial_theta(cfg, *problem), cli::training_set(cfg),
                                 [&](const LogRow& row) {
                                   base << row.cumulative_lower_iters << ',' << std::setprecision(17)
                                        << row.loss_upper_bound << '\n';
                                   oscillations += row.loss_upper_bound > prev;
                                   prev = row.loss_upper_bound;
                                 });

  const bool pass = code == cli::kExitOk && decreasing && recon >= noisy + 1.0;
  return {pass, fmt("%.0f accepted steps, curve strictly decreasing=%.0f, test PSNR %.2f dB vs noisy %.2f dB", budget.size() - 1.0,
                    decreasing, recon, noisy) +
                    fmt("; baseline %.0f steps in %.0f iterations, %.0f loss increases (not asserted)", rf.successes, spent,
                        oscillations)};
}

// 7. Hypergradient error shrinks with the tolerances on the scalar instance.
Outcome convergence_to_exact() {
  ProblemPtr p = quadratic_make(1.0, 1.0, 1, 1, 1);
  const TrainingPair s{Tensor({1, 1}), Tensor({1, 1}, 2.0)};
  const Tensor theta(p->theta_dims(), 1.0);
  const Tensor exact = quadratic_exact_hypergradient(*p, theta, s);
  double t = 1e-6, prev = INFINITY;
  bool monotone = true;
  std::string seq;
  for (int k = 0; k <= 8; ++k, t *= 0.5) {
    const double err = norm(inexact_piggyback(*p, theta, s, {t, t, t, t}).z_theta - exact);
    monotone = monotone && err <= prev;
    prev = err;
    seq += fmt(" %.1e", err);
  }
  return {monotone && prev <= 1e-8, "errors from tolerance 1e-6:" + seq};
}

// 8. Tighter tolerances cost more lower-level iterations from the same warm start.
Outcome budget_monotonicity() {
  ProblemPtr p = quadratic_make(0.1, 0.1, 2, 5, 5);
  const TrainingPair s = random_pair(16, 16, 77);
  const Tensor theta = random_normal(p->theta_dims(), 78, 0.2);
  const PiggybackResult prev = inexact_piggyback(*p, theta * 0.9, s, {1e-3, 1e-3, 1e-3, 1e-3});
  const long loose = inexact_piggyback(*p, theta, s, {1e-2, 1e-2, 1e-2, 1e-2}, prev.warm()).lower_iters;
  const long tight = inexact_piggyback(*p, theta, s, {1e-6, 1e-6, 1e-6, 1e-6}, prev.warm()).lower_iters;
  return {tight > loose, fmt("lower_iters %.0f at 1e-2, %.0f at 1e-6", loose, tight)};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "hypergradient bound soundness", 120, bound_soundness},
      {2, "primal-dual and adjoint residual bounds", 60, solver_soundness},
      {3, "finite-difference hypergradient check", 300, finite_differences},
      {4, "adjoint identities", 10, adjoint_identities},
      {5, "MAID descent and schedule", 60, maid_descent},
      {6, "desk-scale TV discretisation learning", 1800, tv_learning},
      {7, "convergence to the exact hypergradient", 10, convergence_to_exact},
      {8, "budget monotonicity", 10, budget_monotonicity},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = dt <= c.limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("CRITERION %d %s: %s [%.1fs, limit %.0fs%s] %s\n", c.id, pass ? "PASS" : "FAIL", c.name, dt, c.limit_s,
                in_time ? "" : ", over time", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
