#include "bilevel/problems.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "bilevel/errors.hpp"

namespace bilevel {

Tensor Problem::image_of(const Tensor& x, std::size_t h, std::size_t w) const {
  return slice(x, 0, {h, w});
}

namespace {

std::pair<std::size_t, std::size_t> grid_of(const TrainingPair& s) {
  if (s.corrupted.dims().size() != 2)
    throw DimensionError("training pair must be a 2-D image, got " + to_string(s.corrupted.dims()));
  require_same_dims(s.clean, s.corrupted, "training pair");
  return {s.corrupted.dims()[0], s.corrupted.dims()[1]};
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0)) throw ParameterError(std::string(name) + " must be > 0");
}

// 1/2||y + u||^2 - 1/2||u||^2, the conjugate of 1/2||x - u||^2.
BundlePtr fidelity_conjugate(const Tensor& u) { return quadratic_bundle(u * -1.0, 1.0, -0.5 * norm_sq(u)); }

class QuadraticProblem final : public Problem {
 public:
  QuadraticProblem(double mu_g, double mu_f, std::size_t n, std::size_t kh, std::size_t kw)
      : mu_g_(mu_g), mu_f_(mu_f), param_(n, kh, kw) {
    require_positive(mu_g, "mu_g");
    require_positive(mu_f, "mu_fstar");
  }

  std::string kind() const override { return "quadratic"; }
  Dims theta_dims() const override { return param_.theta_dims(); }
  Tensor initial_theta(std::uint64_t seed) const override { return param_.initial_theta(seed); }

  ProblemInstance build(const Tensor& theta, const TrainingPair& s) const override {
    const auto [h, w] = grid_of(s);
    LinOp k = param_.op(theta, h, w);
    SaddleSpec spec(k, quadratic_bundle(s.corrupted, mu_g_), quadratic_bundle(Tensor(k.out_dims()), mu_f_));
    return {spec, LossBundle::squared(s.clean, k.in_dims()), LossBundle::zero(k.out_dims())};
  }

  Tensor theta_gradient(const Tensor& x, const Tensor& y, std::size_t, std::size_t) const override {
    return param_.kernel_gradient(x, y);
  }
  double param_norm(std::size_t h, std::size_t w) const override { return param_.adjoint_norm(h, w); }

  double mu_g() const { return mu_g_; }
  double mu_f() const { return mu_f_; }
  const ConvParametrization& param() const { return param_; }

 private:
  double mu_g_, mu_f_;
  ConvParametrization param_;
};

class TvProblem final : public Problem {
 public:
  explicit TvProblem(const TvOptions& o) : o_(o), param_(o.n_filters, o.kh, o.kw, 2) {
    require_positive(o.lambda, "lambda");
    require_positive(o.mu_g, "mu_g");
    require_positive(o.eps_s, "eps_s");
    require_positive(o.mu_q, "mu_q");
    require_positive(o.mu_y, "mu_y");
  }

  std::string kind() const override { return "tvdisc"; }
  Dims theta_dims() const override { return param_.theta_dims(); }
  Tensor initial_theta(std::uint64_t seed) const override { return param_.initial_theta(seed); }

  ProblemInstance build(const Tensor& theta, const TrainingPair& s) const override {
    const auto [h, w] = grid_of(s);
    const LinOp kq = ops::scaled(ops::adjoint_of(param_.op(theta, h, w)), -1.0);
    const LinOp k = ops::block({{ops::forward_diff_2d(h, w), kq}});
    const Dims qdims = param_.output_dims(h, w);
    const GroupLayout groups{o_.n_filters, 2, h * w};
    BundlePtr qb = o_.nonsmooth ? group_norm_bundle(o_.lambda, groups, qdims, o_.mu_q)
                                : smoothed_group_norm_bundle(o_.eps_s, o_.lambda, groups, qdims, o_.mu_q);
    BundlePtr g = block_bundle({quadratic_bundle(s.corrupted, o_.mu_g), qb});
    BundlePtr fstar = quadratic_bundle(Tensor(k.out_dims()), o_.mu_y);
    SaddleSpec spec(k, g, fstar);
    return {spec, LossBundle::squared(s.clean, k.in_dims()), LossBundle::zero(k.out_dims())};
  }

  // <Dx - K(theta)* q, y> = <Dx, y> - <K(theta) y, q>
  Tensor theta_gradient(const Tensor& x, const Tensor& y, std::size_t h, std::size_t w) const override {
    const Tensor q = slice(x, h * w, param_.output_dims(h, w));
    return param_.kernel_gradient(y, q) * -1.0;
  }
  double param_norm(std::size_t h, std::size_t w) const override { return param_.adjoint_norm(h, w); }

 private:
  TvOptions o_;
  ConvParametrization param_;
};

class FoeProblem final : public Problem {
 public:
  explicit FoeProblem(const FoeOptions& o) : o_(o), param_(o.n_filters, o.kh, o.kw) {
    require_positive(o.gamma, "gamma");
    require_positive(o.mu_g, "mu_g");
    require_positive(o.w, "w");
    require_positive(o.mu_reg, "mu_reg");
  }

  std::string kind() const override { return "foe"; }
  Dims theta_dims() const override { return param_.theta_dims(); }
  Tensor initial_theta(std::uint64_t seed) const override { return param_.initial_theta(seed); }

  ProblemInstance build(const Tensor& theta, const TrainingPair& s) const override {
    const auto [h, w] = grid_of(s);
    const LinOp k = ops::row_stack({ops::identity({h, w}), param_.op(theta, h, w)});
    BundlePtr fstar = block_bundle(
        {fidelity_conjugate(s.corrupted),
         huber_conjugate_bundle(param_.output_dims(h, w), o_.gamma, o_.w, o_.mu_reg)});
    SaddleSpec spec(k, quadratic_bundle(Tensor({h, w}), o_.mu_g), fstar);
    return {spec, LossBundle::squared(s.clean, k.in_dims()), LossBundle::zero(k.out_dims())};
  }

  Tensor theta_gradient(const Tensor& x, const Tensor& y, std::size_t h, std::size_t w) const override {
    return param_.kernel_gradient(x, slice(y, h * w, param_.output_dims(h, w)));
  }
  double param_norm(std::size_t h, std::size_t w) const override { return param_.adjoint_norm(h, w); }

 private:
  FoeOptions o_;
  ConvParametrization param_;
};

class IcnnProblem final : public Problem {
 public:
  explicit IcnnProblem(const IcnnOptions& o)
      : o_(o), v_(o.n1, o.kh, o.kw), w_(o.n2, o.kh, o.kw, o.n1, ConvMode::ChannelSum) {
    require_positive(o.gamma, "gamma");
    require_positive(o.mu_g, "mu_g");
    require_positive(o.w, "w");
    require_positive(o.mu_z, "mu_z");
    require_positive(o.mu_c, "mu_c");
    require_positive(o.mu_reg, "mu_reg");
  }

  std::string kind() const override { return "icnn2"; }
  Dims theta_dims() const override { return {nv() + nw()}; }

  Tensor initial_theta(std::uint64_t seed) const override {
    Tensor wt = w_.initial_theta(seed + 1);
    for (auto& e : wt.data()) e = std::abs(e);
    return concat({v_.initial_theta(seed).reshaped({nv()}), wt.reshaped({nw()})});
  }

  Tensor project_theta(Tensor theta) const override {
    for (std::size_t i = nv(); i < theta.size(); ++i) theta[i] = std::max(theta[i], 0.0);
    return theta;
  }

  ProblemInstance build(const Tensor& theta, const TrainingPair& s) const override {
    require_dims(theta, theta_dims(), "icnn2 theta");
    const auto [h, w] = grid_of(s);
    const Dims zd = v_.output_dims(h, w);
    const LinOp vop = v_.op(slice(theta, 0, v_.theta_dims()), h, w);
    const LinOp wop = w_.op(slice(theta, nv(), w_.theta_dims()), h, w);
    const LinOp k = ops::block({{ops::identity({h, w}), std::nullopt},
                                {vop, std::nullopt},
                                {std::nullopt, ops::identity(zd)},
                                {std::nullopt, wop}});
    const std::size_t nz = product(zd);
    BundlePtr g = block_bundle({quadratic_bundle(Tensor({h, w}), o_.mu_g), quadratic_bundle(Tensor(zd), o_.mu_z)});
    BundlePtr fstar = block_bundle({fidelity_conjugate(s.corrupted), epigraph_support_bundle(nz, o_.w, o_.mu_c),
                                    huber_conjugate_bundle(w_.output_dims(h, w), o_.gamma, o_.w, o_.mu_reg)});
    SaddleSpec spec(k, g, fstar);
    return {spec, LossBundle::squared(s.clean, k.in_dims()), LossBundle::zero(k.out_dims())};
  }

  Tensor theta_gradient(const Tensor& x, const Tensor& y, std::size_t h, std::size_t w) const override {
    const std::size_t hw = h * w;
    const std::size_t nz = o_.n1 * hw;
    const Dims zd = v_.output_dims(h, w);
    const Tensor xi = slice(x, 0, {h, w});
    const Tensor z = slice(x, hw, zd);
    const Tensor y21 = slice(y, hw, zd);
    const Tensor y3 = slice(y, hw + 2 * nz, w_.output_dims(h, w));
    return concat({v_.kernel_gradient(xi, y21).reshaped({nv()}), w_.kernel_gradient(z, y3).reshaped({nw()})});
  }

  double param_norm(std::size_t h, std::size_t w) const override {
    return std::max(v_.adjoint_norm(h, w), w_.adjoint_norm(h, w));
  }

  bool assumptions_violated() const override { return true; }

 private:
  std::size_t nv() const { return product(v_.theta_dims()); }
  std::size_t nw() const { return product(w_.theta_dims()); }

  IcnnOptions o_;
  ConvParametrization v_, w_;
};

}  // namespace

ProblemPtr quadratic_make(double mu_g, double mu_fstar, std::size_t n_filters, std::size_t kh,
                          std::size_t kw) {
  return std::make_shared<QuadraticProblem>(mu_g, mu_fstar, n_filters, kh, kw);
}

ProblemPtr tvdisc_make(const TvOptions& opt) { return std::make_shared<TvProblem>(opt); }
ProblemPtr foe_make(const FoeOptions& opt) { return std::make_shared<FoeProblem>(opt); }
ProblemPtr icnn2_make(const IcnnOptions& opt) { return std::make_shared<IcnnProblem>(opt); }

QuadraticExact quadratic_exact(const Problem& problem, const Tensor& theta, const TrainingPair& sample) {
  const auto* qp = dynamic_cast<const QuadraticProblem*>(&problem);
  if (!qp) throw SpecError("quadratic_exact: problem kind is " + problem.kind());
  const auto [h, w] = grid_of(sample);
  const std::size_t n = h * w;
  if (n > kOracleMaxPixels)
    throw OracleSizeError("quadratic_exact: " + std::to_string(h) + "x" + std::to_string(w) +
                          " exceeds the dense oracle limit");
  const LinOp k = qp->param().op(theta, h, w);
  const std::size_t m = product(k.out_dims());
  Eigen::MatrixXd km(m, n);
  for (std::size_t j = 0; j < n; ++j) {
    Tensor e({h, w});
    e[j] = 1.0;
    const Tensor col = k.apply(e);
    for (std::size_t i = 0; i < m; ++i) km(i, j) = col[i];
  }
  const double mg = qp->mu_g(), mf = qp->mu_f();
  const Eigen::MatrixXd a = mg * Eigen::MatrixXd::Identity(n, n) + km.transpose() * km / mf;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const Eigen::Map<const Eigen::VectorXd> u(sample.corrupted.data().data(), n);
  const Eigen::Map<const Eigen::VectorXd> xs(sample.clean.data().data(), n);
  const Eigen::VectorXd xh = ldlt.solve(mg * u);
  const Eigen::VectorXd xa = -ldlt.solve(xh - xs);
  const Eigen::VectorXd yh = km * xh / mf;
  const Eigen::VectorXd ya = km * xa / mf;

  auto to_tensor = [](const Eigen::VectorXd& v, const Dims& d) {
    return Tensor(d, std::vector<double>(v.data(), v.data() + v.size()));
  };
  QuadraticExact r;
  r.x_hat = to_tensor(xh, {h, w});
  r.X_hat = to_tensor(xa, {h, w});
  r.y_hat = to_tensor(yh, k.out_dims());
  r.Y_hat = to_tensor(ya, k.out_dims());
  r.grad_theta = qp->theta_gradient(r.X_hat, r.y_hat, h, w) + qp->theta_gradient(r.x_hat, r.Y_hat, h, w);
  r.loss = 0.5 * (xh - xs).squaredNorm();
  return r;
}

Tensor quadratic_exact_hypergradient(const Problem& problem, const Tensor& theta,
                                     const TrainingPair& sample) {
  return quadratic_exact(problem, theta, sample).grad_theta;
}

}  // namespace bilevel
