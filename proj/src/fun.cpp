#include "bilevel/fun.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Solves alpha * s + beta * s / sqrt(s^2 + eps^2) = target for s >= 0, where
// alpha > 0, beta >= 0 and target >= 0. The left side is increasing and
// concave, so plain Newton with a bisection safeguard converges quickly.
double solve_radial(double alpha, double beta, double eps, double target) {
  if (target <= 0.0) return 0.0;
  double lo = 0.0, hi = target / alpha;
  double s = hi;
  for (int it = 0; it < 200; ++it) {
    const double r = std::sqrt(s * s + eps * eps);
    const double f = alpha * s + beta * s / r - target;
    if (f > 0.0)
      hi = s;
    else
      lo = s;
    const double df = alpha + beta * eps * eps / (r * r * r);
    double next = s - f / df;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - s) <= 1e-16 * std::max(1.0, s) || hi - lo <= 1e-16 * std::max(1.0, hi)) {
      s = next;
      break;
    }
    s = next;
  }
  return s;
}

void require_size(const Tensor& x, const Dims& dims, const char* where) { require_dims(x, dims, where); }

// ---------------------------------------------------------------------------

class QuadraticBundle final : public FunctionBundle {
 public:
  QuadraticBundle(Tensor center, double weight, double offset)
      : center_(std::move(center)), w_(weight), offset_(offset) {}

  const Dims& dims() const override { return center_.dims(); }

  double value(const Tensor& x) const override {
    return 0.5 * w_ * norm_sq(x - center_) + offset_;
  }
  Tensor grad(const Tensor& x) const override { return (x - center_) * w_; }
  Tensor prox(double tau, const Tensor& p) const override {
    Tensor v = p;
    v.axpy(tau * w_, center_);
    return v * (1.0 / (1.0 + tau * w_));
  }
  Tensor conj_grad(const Tensor& v) const override { return v * (1.0 / w_) + center_; }
  Tensor hess_apply(const Tensor&, const Tensor& d) const override { return d * w_; }
  Tensor hess_inv_apply(const Tensor&, const Tensor& d) const override { return d * (1.0 / w_); }
  Tensor hess_shift_inv_apply(const Tensor&, double tau, const Tensor& d) const override {
    return d * (1.0 / (1.0 + tau * w_));
  }

  double mu() const override { return w_; }
  double l_grad() const override { return w_; }
  double l_hess_conj() const override { return 0.0; }

 private:
  Tensor center_;
  double w_;
  double offset_;
};

// ---------------------------------------------------------------------------

// Per-group matrices of the form a I + b q q^T.
class GroupNormBase : public FunctionBundle {
 public:
  GroupNormBase(double lambda, const GroupLayout& g, Dims dims, double mu)
      : lambda_(lambda), g_(g), dims_(std::move(dims)), mu_(mu) {
    if (product(dims_) != g_.size())
      throw DimensionError("group layout size " + std::to_string(g_.size()) +
                           " does not match dims " + to_string(dims_));
    if (lambda <= 0.0) throw ParameterError("group norm: lambda must be > 0");
    if (mu < 0.0) throw ParameterError("group norm: mu_extra must be >= 0");
  }

  const Dims& dims() const override { return dims_; }

 protected:
  template <typename F>
  void for_each_group(F&& f) const {
    const std::size_t stride = g_.inner;
    for (std::size_t o = 0; o < g_.outer; ++o)
      for (std::size_t i = 0; i < g_.inner; ++i) f(o * g_.group_size * g_.inner + i, stride);
  }

  double group_norm_sq(const Tensor& x, std::size_t base, std::size_t stride) const {
    double s = 0.0;
    for (std::size_t k = 0; k < g_.group_size; ++k) {
      const double v = x[base + k * stride];
      s += v * v;
    }
    return s;
  }

  // out_g = (a I + b q q^T) d_g, or its shifted inverse.
  void apply_rank_one(const Tensor& q, const Tensor& d, Tensor& out, std::size_t base,
                      std::size_t stride, double a, double b) const {
    double qd = 0.0;
    for (std::size_t k = 0; k < g_.group_size; ++k) qd += q[base + k * stride] * d[base + k * stride];
    for (std::size_t k = 0; k < g_.group_size; ++k) {
      const std::size_t idx = base + k * stride;
      out[idx] = a * d[idx] + b * q[idx] * qd;
    }
  }

  // (a I + b q q^T)^{-1} = (1/a)(I - b q q^T / (a + b |q|^2))
  void solve_rank_one(const Tensor& q, const Tensor& d, Tensor& out, std::size_t base,
                      std::size_t stride, double a, double b) const {
    double qd = 0.0, qq = 0.0;
    for (std::size_t k = 0; k < g_.group_size; ++k) {
      const std::size_t idx = base + k * stride;
      qd += q[idx] * d[idx];
      qq += q[idx] * q[idx];
    }
    const double c = b / (a + b * qq);
    for (std::size_t k = 0; k < g_.group_size; ++k) {
      const std::size_t idx = base + k * stride;
      out[idx] = (d[idx] - c * q[idx] * qd) / a;
    }
  }

  // Scales group g of p by factor into out.
  void scale_group(const Tensor& p, Tensor& out, std::size_t base, std::size_t stride,
                   double factor) const {
    for (std::size_t k = 0; k < g_.group_size; ++k) out[base + k * stride] = factor * p[base + k * stride];
  }

  double lambda_;
  GroupLayout g_;
  Dims dims_;
  double mu_;
};

class SmoothedGroupNorm final : public GroupNormBase {
 public:
  SmoothedGroupNorm(double eps, double lambda, const GroupLayout& g, Dims dims, double mu)
      : GroupNormBase(lambda, g, std::move(dims), mu), eps_(eps) {
    if (eps <= 0.0) throw ParameterError("smoothed group norm: eps_s must be > 0");
  }

  double value(const Tensor& x) const override {
    require_size(x, dims_, "smoothed_group_norm value");
    double s = 0.0;
    for_each_group([&](std::size_t base, std::size_t stride) {
      s += std::sqrt(group_norm_sq(x, base, stride) + eps_ * eps_);
    });
    return lambda_ * s + 0.5 * mu_ * norm_sq(x);
  }

  Tensor grad(const Tensor& x) const override {
    Tensor g(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(x, base, stride) + eps_ * eps_);
      scale_group(x, g, base, stride, lambda_ / r + mu_);
    });
    return g;
  }

  Tensor prox(double tau, const Tensor& p) const override {
    Tensor v(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double np = std::sqrt(group_norm_sq(p, base, stride));
      if (np == 0.0) return;
      const double s = solve_radial(1.0 + tau * mu_, tau * lambda_, eps_, np);
      scale_group(p, v, base, stride, s / np);
    });
    return v;
  }

  Tensor conj_grad(const Tensor& v) const override {
    Tensor q(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double nv = std::sqrt(group_norm_sq(v, base, stride));
      if (nv == 0.0) return;
      double s;
      if (mu_ > 0.0) {
        s = solve_radial(mu_, lambda_, eps_, nv);
      } else {
        const double t = nv / lambda_;
        if (t >= 1.0) throw ParameterError("smoothed group norm conjugate gradient outside domain");
        s = eps_ * t / std::sqrt(1.0 - t * t);
      }
      scale_group(v, q, base, stride, s / nv);
    });
    return q;
  }

  Tensor hess_apply(const Tensor& pt, const Tensor& d) const override {
    Tensor out(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(pt, base, stride) + eps_ * eps_);
      apply_rank_one(pt, d, out, base, stride, lambda_ / r + mu_, -lambda_ / (r * r * r));
    });
    return out;
  }

  Tensor hess_inv_apply(const Tensor& pt, const Tensor& d) const override {
    if (mu_ <= 0.0 && lambda_ <= 0.0) throw ParameterError("singular Hessian");
    Tensor out(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(pt, base, stride) + eps_ * eps_);
      solve_rank_one(pt, d, out, base, stride, lambda_ / r + mu_, -lambda_ / (r * r * r));
    });
    return out;
  }

  Tensor hess_shift_inv_apply(const Tensor& pt, double tau, const Tensor& d) const override {
    Tensor out(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(pt, base, stride) + eps_ * eps_);
      solve_rank_one(pt, d, out, base, stride, 1.0 + tau * (lambda_ / r + mu_),
                     -tau * lambda_ / (r * r * r));
    });
    return out;
  }

  double mu() const override { return mu_; }
  double l_grad() const override { return lambda_ / eps_ + mu_; }

  // The third derivative of lambda * sqrt(|q|^2 + eps^2) along any unit
  // direction peaks at (3/2)(4/5)^{5/2} lambda / eps^2. Composed with the
  // inverse-Hessian bound 1/mu this gives the conjugate's Hessian Lipschitz
  // constant L_{H}/mu^3.
  double l_hess_conj() const override {
    if (mu_ <= 0.0) return kInf;
    const double l_hess = 1.5 * std::pow(0.8, 2.5) * lambda_ / (eps_ * eps_);
    return l_hess / (mu_ * mu_ * mu_);
  }

 private:
  double eps_;
};

class GroupNorm final : public GroupNormBase {
 public:
  GroupNorm(double lambda, const GroupLayout& g, Dims dims, double mu)
      : GroupNormBase(lambda, g, std::move(dims), mu) {
    if (mu <= 0.0) throw ParameterError("group norm: mu_extra must be > 0");
  }

  double value(const Tensor& x) const override {
    double s = 0.0;
    for_each_group([&](std::size_t base, std::size_t stride) {
      s += std::sqrt(group_norm_sq(x, base, stride));
    });
    return lambda_ * s + 0.5 * mu_ * norm_sq(x);
  }

  Tensor grad(const Tensor& x) const override {
    Tensor g(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(x, base, stride));
      scale_group(x, g, base, stride, (r > 0.0 ? lambda_ / r : 0.0) + mu_);
    });
    return g;
  }

  Tensor subgrad_residual(const Tensor& x, const Tensor& shift) const override {
    Tensor out(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(x, base, stride));
      if (r > 0.0) {
        for (std::size_t k = 0; k < g_.group_size; ++k) {
          const std::size_t idx = base + k * stride;
          out[idx] = (lambda_ / r + mu_) * x[idx] + shift[idx];
        }
        return;
      }
      // At 0 the subdifferential is the lambda-ball: shrink the shift.
      const double ns = std::sqrt(group_norm_sq(shift, base, stride));
      const double f = ns > lambda_ ? 1.0 - lambda_ / ns : 0.0;
      scale_group(shift, out, base, stride, f);
    });
    return out;
  }

  Tensor prox(double tau, const Tensor& p) const override {
    Tensor v(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double np = std::sqrt(group_norm_sq(p, base, stride));
      if (np <= tau * lambda_) return;
      scale_group(p, v, base, stride, (1.0 - tau * lambda_ / np) / (1.0 + tau * mu_));
    });
    return v;
  }

  Tensor conj_grad(const Tensor& v) const override {
    Tensor q(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double nv = std::sqrt(group_norm_sq(v, base, stride));
      if (nv <= lambda_) return;
      scale_group(v, q, base, stride, (1.0 - lambda_ / nv) / mu_);
    });
    return q;
  }

  Tensor hess_apply(const Tensor& pt, const Tensor& d) const override {
    Tensor out(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(pt, base, stride));
      if (r > 0.0)
        apply_rank_one(pt, d, out, base, stride, lambda_ / r + mu_, -lambda_ / (r * r * r));
      else
        scale_group(d, out, base, stride, mu_);
    });
    return out;
  }

  Tensor hess_inv_apply(const Tensor& pt, const Tensor& d) const override {
    Tensor out(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(pt, base, stride));
      if (r > 0.0)
        solve_rank_one(pt, d, out, base, stride, lambda_ / r + mu_, -lambda_ / (r * r * r));
      else
        scale_group(d, out, base, stride, 1.0 / mu_);
    });
    return out;
  }

  Tensor hess_shift_inv_apply(const Tensor& pt, double tau, const Tensor& d) const override {
    Tensor out(dims_);
    for_each_group([&](std::size_t base, std::size_t stride) {
      const double r = std::sqrt(group_norm_sq(pt, base, stride));
      if (r > 0.0)
        solve_rank_one(pt, d, out, base, stride, 1.0 + tau * (lambda_ / r + mu_),
                       -tau * lambda_ / (r * r * r));
      else
        scale_group(d, out, base, stride, 1.0 / (1.0 + tau * mu_));
    });
    return out;
  }

  double mu() const override { return mu_; }
  double l_grad() const override { return mu_; }
  double l_hess_conj() const override { return 0.0; }
  bool certified() const override { return false; }
};

// ---------------------------------------------------------------------------

class HuberConjugate final : public FunctionBundle {
 public:
  HuberConjugate(Dims dims, double gamma, double w, double mu_reg)
      : dims_(std::move(dims)), gamma_(gamma), w_(w), mu_reg_(mu_reg) {
    if (gamma <= 0.0 || w <= 0.0 || mu_reg <= 0.0)
      throw ParameterError("huber conjugate: gamma, w, mu_reg must be > 0");
  }

  const Dims& dims() const override { return dims_; }

  double value(const Tensor& s) const override {
    double v = 0.0;
    for (double e : s.data()) {
      if (e < 0.0 || e > gamma_) return kInf;
      v += w_ * e * e / (2.0 * gamma_);
    }
    return v;
  }

  Tensor grad(const Tensor& s) const override { return s * (w_ / gamma_); }

  Tensor subgrad_residual(const Tensor& s, const Tensor& shift) const override {
    Tensor out(dims_);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double c = w_ * s[i] / gamma_ + shift[i];
      if (s[i] <= 0.0)
        out[i] = std::min(c, 0.0);  // normal cone (-inf, 0]
      else if (s[i] >= gamma_)
        out[i] = std::max(c, 0.0);  // normal cone [0, inf)
      else
        out[i] = c;
    }
    return out;
  }

  Tensor prox(double sigma, const Tensor& p) const override {
    Tensor v(dims_);
    const double f = 1.0 / (1.0 + sigma * w_ / gamma_);
    for (std::size_t i = 0; i < p.size(); ++i) v[i] = std::clamp(p[i] * f, 0.0, gamma_);
    return v;
  }

  // gradient of gamma * psi_w
  Tensor conj_grad(const Tensor& v) const override {
    Tensor s(dims_);
    for (std::size_t i = 0; i < v.size(); ++i) s[i] = gamma_ * psi_w(v[i], w_, 1);
    return s;
  }

  Tensor hess_apply(const Tensor& pt, const Tensor& d) const override {
    Tensor out(dims_);
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = curvature(pt[i]) * d[i];
    return out;
  }
  Tensor hess_inv_apply(const Tensor& pt, const Tensor& d) const override {
    Tensor out(dims_);
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] / curvature(pt[i]);
    return out;
  }
  Tensor hess_shift_inv_apply(const Tensor& pt, double tau, const Tensor& d) const override {
    Tensor out(dims_);
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] / (1.0 + tau * curvature(pt[i]));
    return out;
  }

  double mu() const override { return std::min(w_ / gamma_, 1.0 / mu_reg_); }
  double l_grad() const override { return std::max(w_ / gamma_, 1.0 / mu_reg_); }
  double l_hess_conj() const override { return 0.0; }
  bool certified() const override { return false; }

 private:
  double curvature(double s) const {
    return (s <= 0.0 || s >= gamma_) ? std::max(w_ / gamma_, 1.0 / mu_reg_) : w_ / gamma_;
  }

  Dims dims_;
  double gamma_, w_, mu_reg_;
};

// ---------------------------------------------------------------------------

class EpigraphSupport final : public FunctionBundle {
 public:
  EpigraphSupport(std::size_t half, double w, double mu)
      : half_(half), dims_({2 * half}), w_(w), mu_(mu) {
    if (w <= 0.0 || mu <= 0.0) throw ParameterError("epigraph support: w, mu_reg must be > 0");
  }

  const Dims& dims() const override { return dims_; }

  double value(const Tensor& y) const override {
    double v = 0.5 * mu_ * norm_sq(y);
    for (std::size_t i = 0; i < half_; ++i) {
      const double p = y[i], q = y[half_ + i];
      if (q == 0.0 && p == 0.0) continue;
      if (q < 0.0 && p >= 0.0 && p <= -q) {
        v += w_ * p * p / (2.0 * -q);
        continue;
      }
      return kInf;
    }
    return v;
  }

  Tensor grad(const Tensor& y) const override { return subgrad_residual(y, Tensor(dims_)); }

  // Minimal-norm element of argmax_{c in C} <c, y> + mu y + shift.
  Tensor subgrad_residual(const Tensor& y, const Tensor& shift) const override {
    Tensor out(dims_);
    for (std::size_t i = 0; i < half_; ++i) {
      const double p = y[i], q = y[half_ + i];
      const double sp = shift[i] + mu_ * p, sq = shift[half_ + i] + mu_ * q;
      double rp, rq;
      if (q == 0.0 && p == 0.0) {
        const auto [cp, cq] = project_epigraph(-sp, -sq, w_);
        rp = sp + cp;
        rq = sq + cq;
      } else if (q < 0.0) {
        const double t = p / -q;
        if (t <= 0.0) {
          rp = std::min(sp, 0.0);
          rq = sq;
        } else if (t >= 1.0 - 1e-12) {  // prox outputs on the linear part carry rounding
          const double a = std::max(w_, (w_ / 2.0 - sp - sq) / 2.0);
          rp = a + sp;
          rq = a - w_ / 2.0 + sq;
        } else {
          const double a = w_ * t;
          rp = a + sp;
          rq = a * a / (2.0 * w_) + sq;
        }
      } else {
        rp = sp;
        rq = sq;
      }
      out[i] = rp;
      out[half_ + i] = rq;
    }
    return out;
  }

  Tensor prox(double sigma, const Tensor& v) const override {
    const double scale = 1.0 / (1.0 + sigma * mu_);
    const double s = sigma * scale;
    Tensor out(dims_);
    for (std::size_t i = 0; i < half_; ++i) {
      const double p = v[i] * scale, q = v[half_ + i] * scale;
      // Moreau decomposition; coordinates the projection leaves alone stay exactly 0.
      const auto [cp, cq] = project_epigraph(p / s, q / s, w_);
      out[i] = s * (p / s - cp);
      out[half_ + i] = s * (q / s - cq);
    }
    return out;
  }

  // Gradient of the Moreau envelope dist^2(., C) / (2 mu).
  Tensor conj_grad(const Tensor& v) const override {
    Tensor out(dims_);
    for (std::size_t i = 0; i < half_; ++i) {
      const auto [cp, cq] = project_epigraph(v[i], v[half_ + i], w_);
      out[i] = (v[i] - cp) / mu_;
      out[half_ + i] = (v[half_ + i] - cq) / mu_;
    }
    return out;
  }

  Tensor hess_apply(const Tensor&, const Tensor& d) const override { return d * mu_; }
  Tensor hess_inv_apply(const Tensor&, const Tensor& d) const override { return d * (1.0 / mu_); }
  Tensor hess_shift_inv_apply(const Tensor&, double tau, const Tensor& d) const override {
    return d * (1.0 / (1.0 + tau * mu_));
  }

  double mu() const override { return mu_; }
  double l_grad() const override { return mu_; }
  double l_hess_conj() const override { return 0.0; }
  bool certified() const override { return false; }

 private:
  std::size_t half_;
  Dims dims_;
  double w_, mu_;
};

// ---------------------------------------------------------------------------

class BlockBundle final : public FunctionBundle {
 public:
  explicit BlockBundle(std::vector<BundlePtr> parts) : parts_(std::move(parts)) {
    if (parts_.empty()) throw SpecError("block bundle: no parts");
    std::size_t total = 0;
    for (const auto& p : parts_) {
      shapes_.push_back(p->dims());
      total += product(p->dims());
    }
    dims_ = parts_.size() == 1 ? shapes_.front() : Dims{total};
  }

  const Dims& dims() const override { return dims_; }

  double value(const Tensor& x) const override {
    const auto xs = pieces(x);
    double v = 0.0;
    for (std::size_t i = 0; i < parts_.size(); ++i) v += parts_[i]->value(xs[i]);
    return v;
  }

  Tensor grad(const Tensor& x) const override {
    return map1(x, [](const FunctionBundle& f, const Tensor& a) { return f.grad(a); });
  }
  Tensor prox(double tau, const Tensor& p) const override {
    return map1(p, [tau](const FunctionBundle& f, const Tensor& a) { return f.prox(tau, a); });
  }
  Tensor conj_grad(const Tensor& v) const override {
    return map1(v, [](const FunctionBundle& f, const Tensor& a) { return f.conj_grad(a); });
  }
  Tensor hess_apply(const Tensor& pt, const Tensor& d) const override {
    return map2(pt, d, [](const FunctionBundle& f, const Tensor& a, const Tensor& b) {
      return f.hess_apply(a, b);
    });
  }
  Tensor hess_inv_apply(const Tensor& pt, const Tensor& d) const override {
    return map2(pt, d, [](const FunctionBundle& f, const Tensor& a, const Tensor& b) {
      return f.hess_inv_apply(a, b);
    });
  }
  Tensor hess_shift_inv_apply(const Tensor& pt, double tau, const Tensor& d) const override {
    return map2(pt, d, [tau](const FunctionBundle& f, const Tensor& a, const Tensor& b) {
      return f.hess_shift_inv_apply(a, tau, b);
    });
  }
  Tensor subgrad_residual(const Tensor& x, const Tensor& shift) const override {
    return map2(x, shift, [](const FunctionBundle& f, const Tensor& a, const Tensor& b) {
      return f.subgrad_residual(a, b);
    });
  }

  double mu() const override {
    double m = kInf;
    for (const auto& p : parts_) m = std::min(m, p->mu());
    return m;
  }
  double l_grad() const override {
    double m = 0.0;
    for (const auto& p : parts_) m = std::max(m, p->l_grad());
    return m;
  }
  double l_hess_conj() const override {
    double m = 0.0;
    for (const auto& p : parts_) m = std::max(m, p->l_hess_conj());
    return m;
  }
  bool certified() const override {
    return std::all_of(parts_.begin(), parts_.end(), [](const auto& p) { return p->certified(); });
  }

 private:
  std::vector<Tensor> pieces(const Tensor& x) const {
    if (parts_.size() == 1) return {x};
    require_dims(x, dims_, "block bundle");
    return split(x, shapes_);
  }

  template <typename F>
  Tensor map1(const Tensor& x, F&& f) const {
    const auto xs = pieces(x);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < parts_.size(); ++i) out.push_back(f(*parts_[i], xs[i]));
    return join(out);
  }

  template <typename F>
  Tensor map2(const Tensor& x, const Tensor& y, F&& f) const {
    const auto xs = pieces(x);
    const auto ys = pieces(y);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < parts_.size(); ++i) out.push_back(f(*parts_[i], xs[i], ys[i]));
    return join(out);
  }

  Tensor join(const std::vector<Tensor>& parts) const {
    if (parts.size() == 1) return parts.front();
    std::vector<const Tensor*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    return concat(ptrs);
  }

  std::vector<BundlePtr> parts_;
  std::vector<Dims> shapes_;
  Dims dims_;
};

}  // namespace

// ---------------------------------------------------------------------------

Tensor FunctionBundle::subgrad_residual(const Tensor& x, const Tensor& shift) const {
  return grad(x) + shift;
}

double psi_w(double x, double w, int order) {
  if (!(w > 0.0)) throw ParameterError("psi_w: w must be > 0");
  switch (order) {
    case 0:
      if (x <= 0.0) return 0.0;
      if (x < w) return x * x / (2.0 * w);
      return x - w / 2.0;
    case 1:
      if (x <= 0.0) return 0.0;
      if (x < w) return x / w;
      return 1.0;
    case 2:
      if (x <= 0.0 || x > w) return 0.0;
      return 1.0 / w;
    default:
      throw ParameterError("psi_w: order must be 0, 1 or 2");
  }
}

Tensor psi_w(const Tensor& x, double w, int order) {
  Tensor out = x;
  for (auto& v : out.data()) v = psi_w(v, w, order);
  return out;
}

BundlePtr quadratic_bundle(const Tensor& center, double weight, double offset) {
  if (!(weight > 0.0)) throw ParameterError("quadratic_bundle: weight must be > 0");
  return std::make_shared<QuadraticBundle>(center, weight, offset);
}

BundlePtr smoothed_group_norm_bundle(double eps_s, double lambda, const GroupLayout& groups,
                                     const Dims& dims, double mu_extra) {
  return std::make_shared<SmoothedGroupNorm>(eps_s, lambda, groups, dims, mu_extra);
}

BundlePtr group_norm_bundle(double lambda, const GroupLayout& groups, const Dims& dims,
                            double mu_extra) {
  return std::make_shared<GroupNorm>(lambda, groups, dims, mu_extra);
}

BundlePtr huber_conjugate_bundle(const Dims& dims, double gamma, double w, double mu_reg) {
  return std::make_shared<HuberConjugate>(dims, gamma, w, mu_reg);
}

BundlePtr epigraph_support_bundle(std::size_t half_size, double w, double mu_reg) {
  return std::make_shared<EpigraphSupport>(half_size, w, mu_reg);
}

BundlePtr block_bundle(std::vector<BundlePtr> parts) {
  return std::make_shared<BlockBundle>(std::move(parts));
}

std::pair<double, double> project_epigraph(double p, double q, double w) {
  if (psi_w(p, w, 0) <= q) return {p, q};
  // Closest point on the graph; try each piece and keep the nearest.
  double best_p = 0.0, best_q = 0.0, best_d = kInf;
  auto consider = [&](double a) {
    const double b = psi_w(a, w, 0);
    const double d = (a - p) * (a - p) + (b - q) * (b - q);
    if (d < best_d) {
      best_d = d;
      best_p = a;
      best_q = b;
    }
  };
  consider(std::min(p, 0.0));                          // flat piece
  consider(std::max(w, (p + q + w / 2.0) / 2.0));      // linear piece
  // Quadratic piece: stationarity (a - p) + (a / w)(a^2 / (2w) - q) = 0 on [0, w].
  auto phi = [&](double a) { return (a - p) + (a / w) * (a * a / (2.0 * w) - q); };
  double lo = 0.0, hi = w;
  double flo = phi(lo), fhi = phi(hi);
  if (flo <= 0.0 && fhi >= 0.0) {
    for (int it = 0; it < 200 && hi - lo > 1e-17 * std::max(1.0, w); ++it) {
      const double mid = 0.5 * (lo + hi);
      if (phi(mid) < 0.0)
        lo = mid;
      else
        hi = mid;
    }
    consider(0.5 * (lo + hi));
  }
  consider(0.0);
  consider(w);
  return {best_p, best_q};
}

double hessian_lipschitz_self(const FunctionBundle& bundle) {
  const double l = bundle.l_grad();
  return bundle.l_hess_conj() * l * l * l;
}

// ---------------------------------------------------------------------------

LossBundle LossBundle::zero(const Dims& var_dims) { return LossBundle(var_dims, std::nullopt, 0); }

LossBundle LossBundle::squared(const Tensor& target, const Dims& var_dims, std::size_t offset) {
  if (offset + target.size() > product(var_dims))
    throw DimensionError("LossBundle::squared: target does not fit the variable");
  return LossBundle(var_dims, target, offset);
}

double LossBundle::value(const Tensor& x) const {
  require_dims(x, dims_, "LossBundle::value");
  if (!target_) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < target_->size(); ++i) {
    const double d = x[offset_ + i] - (*target_)[i];
    s += d * d;
  }
  return 0.5 * s;
}

Tensor LossBundle::grad(const Tensor& x) const {
  require_dims(x, dims_, "LossBundle::grad");
  Tensor g(dims_);
  if (!target_) return g;
  for (std::size_t i = 0; i < target_->size(); ++i) g[offset_ + i] = x[offset_ + i] - (*target_)[i];
  return g;
}

}  // namespace bilevel
