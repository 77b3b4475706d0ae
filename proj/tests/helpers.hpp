#pragma once

#include <cmath>
#include <cstdint>

#include "bilevel/linop.hpp"
#include "bilevel/rng.hpp"
#include "bilevel/tensor.hpp"

namespace testing_support {

using namespace bilevel;

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

/// |<Kx, y> - <x, K* y>| / (|x| |y|) for seeded random x, y.
inline double adjoint_gap(const LinOp& k, std::uint64_t seed) {
  const Tensor x = random_normal(k.in_dims(), seed);
  const Tensor y = random_normal(k.out_dims(), seed + 7777);
  return std::abs(dot(k.apply(x), y) - dot(x, k.adjoint_apply(y))) / (norm(x) * norm(y));
}

}  // namespace testing_support

#include <Eigen/Dense>

#include "bilevel/fun.hpp"

namespace testing_support {

inline Eigen::VectorXd vec(const Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.values().data(), static_cast<Eigen::Index>(t.size()));
}

inline Tensor tensor(const Eigen::VectorXd& v, const Dims& dims) {
  return Tensor(dims, std::vector<double>(v.data(), v.data() + v.size()));
}

/// Dense matrix of a linear map given on tensors, column by column.
template <class F>
Eigen::MatrixXd dense(F&& apply, const Dims& in, std::size_t out_size) {
  const std::size_t n = product(in);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(out_size), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    Tensor e(in);
    e[j] = 1.0;
    m.col(static_cast<Eigen::Index>(j)) = vec(apply(e));
  }
  return m;
}

inline Eigen::MatrixXd dense(const LinOp& k) {
  return dense([&](const Tensor& e) { return k.apply(e); }, k.in_dims(), product(k.out_dims()));
}

inline Eigen::MatrixXd dense_hessian(const FunctionBundle& b, const Tensor& at) {
  return dense([&](const Tensor& e) { return b.hess_apply(at, e); }, b.dims(), product(b.dims()));
}

}  // namespace testing_support
