#include "commands.hpp"

#include <algorithm>
#include <climits>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "bilevel/errors.hpp"
#include "bilevel/imaging.hpp"
#include "bilevel/rng.hpp"

namespace bilevel::cli {

namespace fs = std::filesystem;

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ToleranceNotReached& e) {
    err << "error: " << e.what() << " (best bounds " << e.best_first() << ", " << e.best_second() << ")\n";
    return kExitNumerical;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot write " + p.string());
  return f;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
}

class BudgetWriter {
 public:
  explicit BudgetWriter(const fs::path& p) : f_(open_out(p)) {
    f_ << "cumulative_lower_iters,loss_upper_bound\n";
    f_.flush();
  }
  void operator()(const LogRow& r) {
    if (!r.accepted) return;
    f_ << r.cumulative_lower_iters << ',' << std::setprecision(17) << r.loss_upper_bound << '\n';
    f_.flush();
  }

 private:
  std::ofstream f_;
};

double reconstruction_psnr(const Problem& p, const Tensor& theta, const TrainingPair& s, double tol) {
  const std::size_t h = s.clean.dims()[0], w = s.clean.dims()[1];
  const LowerSolve l = solve_lower(p, theta, s, tol, tol, std::nullopt);
  return psnr(p.image_of(l.solve.x, h, w), s.clean, 1.0);
}

double mean_psnr(const Problem& p, const Tensor& theta, const std::vector<TrainingPair>& set, double tol) {
  double sum = 0.0;
  for (const auto& s : set) sum += reconstruction_psnr(p, theta, s, tol);
  return sum / static_cast<double>(set.size());
}

double mean_noisy_psnr(const std::vector<TrainingPair>& set) {
  double sum = 0.0;
  for (const auto& s : set) sum += psnr(s.corrupted, s.clean, 1.0);
  return sum / static_cast<double>(set.size());
}

const char* stop_name(MaidStop s) {
  switch (s) {
    case MaidStop::MaxOuter: return "max_outer";
    case MaidStop::Budget: return "budget";
    case MaidStop::Stagnation: return "stagnation";
  }
  return "?";
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const ProblemPtr problem = make_problem(cfg);
  const auto train = training_set(cfg);
  const auto test = test_set(cfg);
  const Tensor theta0 = initial_theta(cfg, *problem);
  const fs::path dir = cfg.out;
  ensure_dir(dir);
  write_f64t(theta0, dir / "filters_init.f64t");

  std::ofstream history = open_out(dir / "history.csv");
  write_log_header(history);
  BudgetWriter budget(dir / "budget.csv");
  const MaidResult r = maid_run(cfg.maid, *problem, theta0, train, [&](const LogRow& row) {
    write_log_row(history, row);
    budget(row);
  });
  write_f64t(r.theta, dir / "filters.f64t");

  out << "stop=" << stop_name(r.stop) << " accepted=" << r.successes << " failed_rounds=" << r.failed_rounds
      << " lower_iters=" << r.lower_iters << (r.heuristic ? " heuristic" : "") << '\n';
  if (!test.empty()) {
    out << std::fixed << std::setprecision(3) << "test_psnr_noisy=" << mean_noisy_psnr(test)
        << " test_psnr_init=" << mean_psnr(*problem, theta0, test, cfg.denoise_tol)
        << " test_psnr_final=" << mean_psnr(*problem, r.theta, test, cfg.denoise_tol) << '\n';
    out.unsetf(std::ios::fixed);
  }
  if (r.stop == MaidStop::Stagnation) {
    out << "stagnation: " << r.diagnostic << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_check_grad(const RunConfig& cfg, std::ostream& out) {
  const ProblemPtr problem = make_problem(cfg);
  const auto samples = training_set(cfg);
  const TrainingPair& s = samples.front();
  const std::size_t h = s.clean.dims()[0], w = s.clean.dims()[1];
  if (h * w > kOracleMaxPixels)
    throw OracleSizeError("check-grad supports at most " + std::to_string(kOracleMaxPixels) + " pixels");
  const Tensor theta = initial_theta(cfg, *problem);
  const bool heuristic = problem->assumptions_violated();

  // Central differences of the tightly solved loss, one coordinate at a time.
  const LowerSolve centre = solve_lower(*problem, theta, s, cfg.fd_tol, cfg.fd_tol, std::nullopt);
  Tensor fd(theta.dims());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    Tensor tp = theta, tm = theta;
    tp[i] += cfg.fd_step;
    tm[i] -= cfg.fd_step;
    const double lp = solve_lower(*problem, tp, s, cfg.fd_tol, cfg.fd_tol, centre.solve.state).loss;
    const double lm = solve_lower(*problem, tm, s, cfg.fd_tol, cfg.fd_tol, centre.solve.state).loss;
    fd[i] = (lp - lm) / (2.0 * cfg.fd_step);
  }

  constexpr double kNoiseFloor = 1e-6;
  bool all_sound = true;
  out << "eps_x,eps_y,delta_X,delta_Y,error,bound_theta,sound,marker\n";
  for (const double t : cfg.tol_grid) {
    const Tolerances tol{t, t, t, t};
    const PiggybackResult r = inexact_piggyback(*problem, theta, s, tol, {}, cfg.maid.max_lower_iter);
    const double err = norm(r.z_theta - fd);
    const bool sound = r.bound_theta >= err - kNoiseFloor;
    all_sound = all_sound && sound;
    out << std::setprecision(6) << t << ',' << t << ',' << t << ',' << t << ',' << std::setprecision(17) << err
        << ',' << r.bound_theta << ',' << (sound ? 1 : 0) << ',' << (r.heuristic || heuristic ? "heuristic" : "")
        << '\n';
  }
  if (heuristic) return kExitOk;
  return all_sound ? kExitOk : kExitUnsound;
}

int cmd_denoise(const RunConfig& cfg, const DenoiseArgs& args, std::ostream& out) {
  const ProblemPtr problem = make_problem(cfg);
  const Tensor theta = read_f64t(args.filters);
  if (theta.dims() != problem->theta_dims())
    throw DimensionError("filters file has dims " + to_string(theta.dims()) + ", configured geometry needs " +
                         to_string(problem->theta_dims()));
  std::optional<Image> clean;
  if (!args.clean.empty()) clean = load_pgm(args.clean);
  Image noisy;
  if (!args.image.empty()) {
    noisy = load_pgm(args.image);
  } else if (clean) {
    noisy = add_gaussian_noise(*clean, cfg.noise_sigma, cfg.effective_noise_seed());
  } else {
    throw ParameterError("denoise needs --image or --clean");
  }
  if (clean && clean->pixels.dims() != noisy.pixels.dims())
    throw DimensionError("clean and noisy images differ in size");

  const Tensor u = noisy.pixels * (1.0 / 255.0);
  const TrainingPair sample{clean ? clean->pixels * (1.0 / 255.0) : u, u};
  const LowerSolve l = solve_lower(*problem, theta, sample, cfg.denoise_tol, cfg.denoise_tol, std::nullopt,
                                   cfg.maid.max_lower_iter);
  Image recon = make_image(problem->image_of(l.solve.x, noisy.height(), noisy.width()) * 255.0, "reconstruction");
  const fs::path dir = cfg.out;
  ensure_dir(dir);
  save_pgm(recon, dir / "reconstruction.pgm");
  out << "lower_iters=" << l.solve.iters << '\n';
  if (clean) {
    out << std::fixed << std::setprecision(3) << "psnr_noisy=" << psnr(noisy, *clean)
        << " psnr_recon=" << psnr(recon, *clean) << " ssim_noisy=" << std::setprecision(4) << ssim(noisy, *clean)
        << " ssim_recon=" << ssim(recon, *clean) << '\n';
    out.unsetf(std::ios::fixed);
  }
  return kExitOk;
}

int cmd_budget_bench(const RunConfig& cfg, std::ostream& out) {
  const ProblemPtr problem = make_problem(cfg);
  const auto train = training_set(cfg);
  const Tensor theta0 = initial_theta(cfg, *problem);
  const fs::path dir = cfg.out;
  ensure_dir(dir);

  MaidConfig adaptive = cfg.maid;
  adaptive.adaptive = true;
  MaidResult ra;
  {
    BudgetWriter w(dir / "budget_adaptive.csv");
    ra = maid_run(adaptive, *problem, theta0, train, [&](const LogRow& row) { w(row); });
  }

  MaidConfig fixed = cfg.maid;
  fixed.adaptive = false;
  fixed.alpha0 = cfg.baseline_alpha.value_or(cfg.maid.alpha0);
  if (cfg.baseline_tol) fixed.tol0 = {*cfg.baseline_tol, *cfg.baseline_tol, *cfg.baseline_tol, *cfg.baseline_tol};
  fixed.budget_cap = cfg.maid.budget_cap >= 0 ? cfg.maid.budget_cap : ra.lower_iters;
  fixed.max_outer = INT_MAX;
  MaidResult rf;
  {
    BudgetWriter w(dir / "budget_fixed.csv");
    rf = maid_run(fixed, *problem, theta0, train, [&](const LogRow& row) { w(row); });
  }

  const bool same_first = ra.first_z.dims() == rf.first_z.dims() && ra.first_z.values() == rf.first_z.values();
  out << "adaptive: stop=" << stop_name(ra.stop) << " accepted=" << ra.successes << " lower_iters=" << ra.lower_iters
      << '\n'
      << "fixed: stop=" << stop_name(rf.stop) << " steps=" << rf.successes << " lower_iters=" << rf.lower_iters
      << '\n'
      << "first_hypergradient_match=" << (same_first ? 1 : 0) << '\n';
  if (ra.stop == MaidStop::Stagnation) {
    out << "stagnation: " << ra.diagnostic << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace bilevel::cli
