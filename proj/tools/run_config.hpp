#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/maid.hpp"
#include "bilevel/problems.hpp"

namespace bilevel::cli {

/// Flat run configuration. Every key is optional; see README for the list.
struct RunConfig {
  std::string problem = "quadratic";

  // quadratic
  double mu_fstar = 1.0;
  // shared
  double mu_g = -1.0;  // negative: per-problem default
  std::size_t n_filters = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  // tvdisc
  double reg_lambda = 0.05;
  double eps_s = 1e-3;
  double mu_q = 1e-2;
  double mu_y = 1e-2;
  bool nonsmooth_tv = false;
  // foe, icnn2
  double gamma = 0.1;
  double w = 0.01;
  double mu_reg = 1e-6;
  std::size_t n1 = 16;
  std::size_t n2 = 4;
  double mu_z = 1e-2;
  double mu_c = 1e-2;

  // data
  std::vector<std::string> images;
  std::vector<std::string> test_images;
  std::size_t synthetic_count = 0;
  std::size_t synthetic_test_count = 0;
  std::size_t synthetic_height = 16;
  std::size_t synthetic_width = 16;
  double noise_sigma = 25.5;
  std::optional<std::uint64_t> noise_seed;
  std::uint64_t seed = 0;
  std::string init_filters;

  // optimiser
  MaidConfig maid;
  std::optional<double> baseline_alpha;
  std::optional<double> baseline_tol;

  // check-grad
  std::vector<double> tol_grid{1e-2, 1e-4, 1e-6, 1e-8};
  double fd_step = 1e-5;
  double fd_tol = 1e-10;

  // denoise
  double denoise_tol = 1e-6;

  std::string out = "out";

  std::uint64_t effective_noise_seed() const { return noise_seed.value_or(seed + 1000); }
};

/// Parses a JSON object. Unknown keys, wrong types and out-of-range values
/// raise ParameterError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

ProblemPtr make_problem(const RunConfig& cfg);

/// Training pairs on the [0, 1] scale, from image paths or the synthetic
/// generator, with seeded noise.
std::vector<TrainingPair> training_set(const RunConfig& cfg);
std::vector<TrainingPair> test_set(const RunConfig& cfg);

Tensor initial_theta(const RunConfig& cfg, const Problem& problem);

}  // namespace bilevel::cli
