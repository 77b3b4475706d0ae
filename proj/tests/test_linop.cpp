#include <doctest.h>

#include "bilevel/conv.hpp"
#include "bilevel/errors.hpp"
#include "helpers.hpp"

using namespace bilevel;
using testing_support::adjoint_gap;

TEST_CASE("identity and zero operators") {
  const Tensor x = random_normal({1, 2, 3}, 1);
  CHECK(ops::identity({1, 2, 3}).apply(x).values() == x.values());
  CHECK(ops::identity({1, 2, 3}).adjoint_apply(x).values() == x.values());
  const Tensor z = ops::zero({1, 2, 3}, {4}).apply(x);
  CHECK(z.dims() == Dims{4});
  CHECK(norm(z) == 0.0);
  CHECK(op_norm_estimate(ops::zero({3}, {3})) == 0.0);
}

TEST_CASE("finite differences of a constant image vanish") {
  const Tensor c({5, 7}, 3.25);
  const Tensor d = ops::forward_diff_2d(5, 7).apply(c);
  CHECK(d.dims() == Dims{2, 5, 7});
  CHECK(norm(d) == 0.0);
}

TEST_CASE("1-D difference adjoint on a 2x3 matrix") {
  const LinOp d = ops::forward_diff_1d(3);
  const Tensor x = Tensor::vector({1, 2, 4}), y = Tensor::vector({1, 1});
  const Tensor dx = d.apply(x);
  CHECK(dx.values() == std::vector<double>{1, 2});
  const Tensor dty = d.adjoint_apply(y);
  CHECK(dty.values() == std::vector<double>{-1, 0, 1});
  CHECK(dot(dx, y) == dot(x, dty));
}

TEST_CASE("shape mismatch raises a dimension error") {
  const LinOp d = ops::forward_diff_2d(4, 4);
  CHECK_THROWS_AS(d.apply(Tensor({4, 5})), DimensionError);
  CHECK_THROWS_AS(d.adjoint_apply(Tensor({4, 4})), DimensionError);
}

TEST_CASE("adjoint identity for combinators and conv banks") {
  ConvParametrization p(3, 5, 5);
  const LinOp conv = p.op(random_normal(p.theta_dims(), 3), 16, 16);
  const LinOp d = ops::forward_diff_2d(16, 16);
  const std::vector<LinOp> list = {
      conv,
      ops::scaling({16, 16}, -2.5),
      ops::compose(conv, ops::scaling({16, 16}, 0.5)),
      ops::adjoint_of(conv),
      ops::scaled(d, 3.0),
      ops::row_stack({ops::identity({16, 16}), conv, d}),
      ops::col_stack({ops::identity({16, 16}), ops::scaling({16, 16}, 2.0)}),
      ops::block({{d, ops::adjoint_of(ops::scaled(ops::identity({2, 16, 16}), -1.0))},
                  {std::nullopt, ops::identity({2, 16, 16})}}),
  };
  for (std::size_t i = 0; i < list.size(); ++i)
    for (std::uint64_t s = 0; s < 5; ++s) CHECK(adjoint_gap(list[i], 100 * i + s) <= 1e-10);
}

TEST_CASE("power method norm estimates") {
  CHECK(op_norm_estimate(ops::identity({8})) == doctest::Approx(1.01).epsilon(1e-6));
  CHECK(op_norm_estimate(ops::scaling({8}, -3.0)) == doctest::Approx(3.03).epsilon(1e-6));
  // Largest singular value of the 512 x 256 Neumann difference matrix
  // (dense SVD reference).
  const double exact = 2.814807475052765;
  const double est = op_norm_estimate(ops::forward_diff_2d(16, 16));
  CHECK(est / 1.01 <= exact + 1e-9);
  CHECK(est / 1.01 >= exact * (1.0 - 1e-3));
  CHECK(ops::forward_diff_2d(16, 16).norm_est() == est);
}

TEST_CASE("norm estimate upper-bounds the gain on random inputs") {
  ConvParametrization p(4, 5, 5);
  const LinOp k = p.op(random_normal(p.theta_dims(), 11), 12, 12);
  const double est = k.norm_est();
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Tensor x = random_normal(k.in_dims(), 500 + s);
    CHECK(norm(k.apply(x)) <= est * norm(x));
  }
}

TEST_CASE("conv output keeps the grid and is linear in theta") {
  ConvParametrization p(2, 3, 5);
  const Tensor t1 = random_normal(p.theta_dims(), 1), t2 = random_normal(p.theta_dims(), 2);
  const Tensor x = random_normal({9, 7}, 3);
  const Tensor a = p.op(t1 + t2, 9, 7).apply(x);
  const Tensor b = p.op(t1, 9, 7).apply(x) + p.op(t2, 9, 7).apply(x);
  CHECK(a.dims() == Dims{2, 9, 7});
  CHECK(norm(a - b) <= 1e-12 * norm(a));
}

TEST_CASE("kernel gradient") {
  SUBCASE("zero input gives zero gradient") {
    ConvParametrization p(2, 3, 3);
    const Tensor g = p.kernel_gradient(Tensor({6, 6}), random_normal(p.output_dims(6, 6), 1));
    CHECK(norm(g) == 0.0);
  }
  SUBCASE("1x1 kernel is a scalar multiple") {
    ConvParametrization p(1, 1, 1);
    const Tensor x = random_normal({5, 4}, 1), y = random_normal({1, 5, 4}, 2);
    CHECK(p.kernel_gradient(x, y)[0] == doctest::Approx(dot(x, y)).epsilon(1e-12));
  }
  SUBCASE("matches central differences") {
    ConvParametrization p(2, 5, 5);
    const Tensor theta = random_normal(p.theta_dims(), 4);
    const Tensor x = random_normal({8, 8}, 5), y = random_normal(p.output_dims(8, 8), 6);
    const Tensor g = p.kernel_gradient(x, y);
    const double h = 1e-6;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      Tensor tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      const double fd = (dot(p.op(tp, 8, 8).apply(x), y) - dot(p.op(tm, 8, 8).apply(x), y)) / (2 * h);
      CHECK(std::abs(fd - g[i]) <= 1e-6 * std::max(1.0, std::abs(g[i])));
    }
  }
  SUBCASE("exact adjoint of theta -> K(theta) x") {
    for (ConvMode mode : {ConvMode::PerChannel, ConvMode::ChannelSum}) {
      ConvParametrization p(3, 5, 3, 2, mode);
      const Tensor x = random_normal(p.input_dims(7, 6), 7), y = random_normal(p.output_dims(7, 6), 8);
      const Tensor dt = random_normal(p.theta_dims(), 9);
      const double lhs = dot(p.kernel_gradient(x, y), dt);
      const double rhs = dot(p.op(dt, 7, 6).apply(x), y);
      CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("parametrization norm bounds the Frobenius gain") {
  ConvParametrization p(2, 3, 3);
  const double pn = p.adjoint_norm(6, 5);
  // ||K(theta)||_F^2 computed column by column.
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor t = random_normal(p.theta_dims(), 40 + s);
    const LinOp k = p.op(t, 6, 5);
    double fro = 0.0;
    for (std::size_t j = 0; j < 30; ++j) {
      Tensor e({6, 5});
      e[j] = 1.0;
      fro += norm_sq(k.apply(e));
    }
    CHECK(std::sqrt(fro) <= pn * norm(t) * (1 + 1e-12));
  }
}

TEST_CASE("initial filters have zero mean") {
  ConvParametrization p(8, 5, 5);
  const Tensor t = p.initial_theta(1);
  for (std::size_t f = 0; f < 8; ++f) {
    double m = 0.0;
    for (std::size_t k = 0; k < 25; ++k) m += t[f * 25 + k];
    CHECK(std::abs(m) < 1e-14);
  }
  CHECK(p.initial_theta(1).values() == t.values());
}
