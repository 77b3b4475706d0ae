#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "bilevel/tensor.hpp"

namespace bilevel {

/// Convex-function capsule: everything the primal-dual solvers and the
/// hypergradient bound need from one term of a saddle-point problem.
///
/// Constants follow the naming of the bound formulas: `mu` is the strong
/// convexity modulus of this function h, `l_grad` the Lipschitz constant of
/// grad h, and `l_hess_conj` the Lipschitz constant of the Hessian of the
/// conjugate h*. `certified()` is false when any of these is a heuristic
/// stand-in (non-smooth or constrained terms).
class FunctionBundle {
 public:
  virtual ~FunctionBundle() = default;

  virtual const Dims& dims() const = 0;

  virtual double value(const Tensor& x) const = 0;
  virtual Tensor grad(const Tensor& x) const = 0;
  /// argmin_v h(v) + ||v - p||^2 / (2 tau)
  virtual Tensor prox(double tau, const Tensor& p) const = 0;
  /// grad h*(v), the inverse map of grad h.
  virtual Tensor conj_grad(const Tensor& v) const = 0;
  virtual Tensor hess_apply(const Tensor& point, const Tensor& d) const = 0;
  virtual Tensor hess_inv_apply(const Tensor& point, const Tensor& d) const = 0;
  /// (I + tau H(point))^{-1} d, the prox of the quadratic model at point.
  virtual Tensor hess_shift_inv_apply(const Tensor& point, double tau, const Tensor& d) const = 0;
  /// Minimal-norm element of (subdifferential of h at x) + shift.
  virtual Tensor subgrad_residual(const Tensor& x, const Tensor& shift) const;

  virtual double mu() const = 0;
  virtual double l_grad() const = 0;
  virtual double l_hess_conj() const = 0;
  virtual bool certified() const { return true; }
};

using BundlePtr = std::shared_ptr<const FunctionBundle>;

/// Groups of a group norm: index = outer * (group_size * inner) + g * inner + i,
/// one group per (outer, i), members g = 0 .. group_size - 1.
struct GroupLayout {
  std::size_t outer = 1;
  std::size_t group_size = 1;
  std::size_t inner = 1;

  std::size_t n_groups() const { return outer * inner; }
  std::size_t size() const { return outer * group_size * inner; }
};

/// Elementwise one-sided Huber function: 0 for x <= 0, x^2 / (2w) on (0, w),
/// x - w/2 beyond. order 1 and 2 give the derivatives; the second
/// derivative takes its left limit at the breakpoints.
Tensor psi_w(const Tensor& x, double w, int order);
double psi_w(double x, double w, int order);

/// (weight / 2) ||x - center||^2 + offset
BundlePtr quadratic_bundle(const Tensor& center, double weight, double offset = 0.0);

/// lambda * sum_g sqrt(||q_g||^2 + eps_s^2) + (mu_extra / 2) ||q||^2.
/// With mu_extra = 0 the conjugate-side operations are unavailable.
BundlePtr smoothed_group_norm_bundle(double eps_s, double lambda, const GroupLayout& groups,
                                     const Dims& dims, double mu_extra = 0.0);

/// lambda * sum_g ||q_g|| + (mu_extra / 2) ||q||^2 with the generalized Hessian
/// lambda (I/|q| - q q^T / |q|^3) away from 0 and 0 at 0. Constants heuristic.
BundlePtr group_norm_bundle(double lambda, const GroupLayout& groups, const Dims& dims,
                            double mu_extra);

/// Conjugate of gamma * psi_w (summed over entries): w s^2 / (2 gamma) on
/// [0, gamma]. At a clipped entry the curvature of gamma * psi_w vanishes; the
/// Hessian there is regularised to 1 / mu_reg.
BundlePtr huber_conjugate_bundle(const Dims& dims, double gamma, double w, double mu_reg);

/// Support function of C = {(p, q) : psi_w(p) <= q} plus (mu_reg / 2) ||.||^2,
/// over a variable laid out as [p-block; q-block] of equal size. Hessian is
/// the surrogate mu_reg * I.
BundlePtr epigraph_support_bundle(std::size_t half_size, double w, double mu_reg);

/// Euclidean projection of (p, q) onto the epigraph of psi_w.
std::pair<double, double> project_epigraph(double p, double q, double w);

/// Separable sum over a flat concatenation of the parts' variables.
BundlePtr block_bundle(std::vector<BundlePtr> parts);

/// Lipschitz constant of the bundle's own Hessian, l_hess_conj * l_grad^3.
double hessian_lipschitz_self(const FunctionBundle& bundle);

/// Smooth upper-level loss term.
class LossBundle {
 public:
  /// l == 0 on a variable of the given dims.
  static LossBundle zero(const Dims& var_dims);
  /// 1/2 ||x_slice - target||^2 where x_slice is the range
  /// [offset, offset + target.size()) of the variable.
  static LossBundle squared(const Tensor& target, const Dims& var_dims, std::size_t offset = 0);

  double value(const Tensor& x) const;
  Tensor grad(const Tensor& x) const;
  double l_smooth() const { return target_ ? 1.0 : 0.0; }
  const Dims& dims() const { return dims_; }

 private:
  LossBundle(Dims dims, std::optional<Tensor> target, std::size_t offset)
      : dims_(std::move(dims)), target_(std::move(target)), offset_(offset) {}

  Dims dims_;
  std::optional<Tensor> target_;
  std::size_t offset_ = 0;
};

}  // namespace bilevel
