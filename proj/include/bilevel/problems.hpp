#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "bilevel/conv.hpp"
#include "bilevel/saddle.hpp"

namespace bilevel {

struct TrainingPair {
  Tensor clean;      // x*
  Tensor corrupted;  // u
};

struct ProblemInstance {
  SaddleSpec spec;
  LossBundle loss1;  // on the primal variable
  LossBundle loss2;  // on the dual variable
};

/// Bilevel problem factory: maps (theta, training pair) to a lower-level
/// saddle problem whose operator K(theta) is affine in the learnable kernels.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string kind() const = 0;
  virtual Dims theta_dims() const = 0;
  virtual Tensor initial_theta(std::uint64_t seed) const = 0;
  virtual ProblemInstance build(const Tensor& theta, const TrainingPair& sample) const = 0;

  /// d<K(theta) x, y>/d theta for a primal point x and a dual point y on an
  /// h x w image grid.
  virtual Tensor theta_gradient(const Tensor& x, const Tensor& y, std::size_t h,
                                std::size_t w) const = 0;
  /// Norm of the linear map theta -> K(theta), Frobenius norm on the
  /// operator side, for an h x w image grid.
  virtual double param_norm(std::size_t h, std::size_t w) const = 0;

  /// Feasible-set projection applied after every parameter update.
  virtual Tensor project_theta(Tensor theta) const { return theta; }
  /// Image part of a primal point.
  virtual Tensor image_of(const Tensor& x, std::size_t h, std::size_t w) const;

  /// True when the lower level is not strongly convex as modelled and a
  /// surrogate is used; bounds are then heuristic.
  virtual bool assumptions_violated() const { return false; }
};

using ProblemPtr = std::shared_ptr<const Problem>;

/// g(x) = (mu_g/2)||x - u||^2, f*(y) = (mu_f/2)||y||^2, K = conv bank.
ProblemPtr quadratic_make(double mu_g, double mu_fstar, std::size_t n_filters = 1,
                          std::size_t kh = 1, std::size_t kw = 1);

struct TvOptions {
  double lambda = 0.05;
  double mu_g = 1.0;
  double eps_s = 1e-3;
  std::size_t n_filters = 8;
  std::size_t kh = 5;
  std::size_t kw = 5;
  /// (mu_q/2)||q||^2 added to the q-block.
  double mu_q = 1e-2;
  /// f*(y) = (mu_y/2)||y||^2 relaxes the constraint K* q = Dx.
  double mu_y = 1e-2;
  bool nonsmooth = false;
};

/// min_{x,q} max_y (mu_g/2)||x - u||^2 + lambda ||q||_Z + <Dx - K*q, y> - f*(y)
ProblemPtr tvdisc_make(const TvOptions& opt);

struct FoeOptions {
  double gamma = 0.1;
  double mu_g = 1e-2;
  double w = 0.01;
  std::size_t n_filters = 16;
  std::size_t kh = 5;
  std::size_t kw = 5;
  double mu_reg = 1e-6;
};

/// min_x max_{y1,y2} <x, y1> + (mu_g/2)||x||^2 - 1/2||y1 + u||^2 + 1/2||u||^2
///                   + <Kx, y2> - (gamma psi_w)*(y2)
ProblemPtr foe_make(const FoeOptions& opt);

struct IcnnOptions {
  double gamma = 0.1;
  double mu_g = 1e-2;
  double w = 0.01;
  std::size_t n1 = 16;
  std::size_t n2 = 4;
  std::size_t kh = 5;
  std::size_t kw = 5;
  /// (mu_z/2)||z||^2 on the hidden variable.
  double mu_z = 1e-2;
  /// Quadratic regularisation of the support function of C.
  double mu_c = 1e-2;
  double mu_reg = 1e-6;
};

/// Two-layer ICNN with duals y1 (fidelity), y2 = (y21, y22) (epigraph of
/// psi_w), y3 (second layer). theta = [V; W] flattened, W kept >= 0.
ProblemPtr icnn2_make(const IcnnOptions& opt);

/// Dense closed-form solution of the quadratic problem and its exact
/// hypergradient (loss 1/2||x_hat - x*||^2).
struct QuadraticExact {
  Tensor x_hat, y_hat, X_hat, Y_hat;
  Tensor grad_theta;
  double loss = 0.0;
};

inline constexpr std::size_t kOracleMaxPixels = 32 * 32;

QuadraticExact quadratic_exact(const Problem& problem, const Tensor& theta,
                               const TrainingPair& sample);
Tensor quadratic_exact_hypergradient(const Problem& problem, const Tensor& theta,
                                     const TrainingPair& sample);

}  // namespace bilevel
