#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/tensor.hpp"

namespace bilevel {

/// Matrix-free linear operator. Immutable value type sharing its
/// implementation; copies are cheap and safe to use from several threads.
class LinOp {
 public:
  class Impl {
   public:
    Impl(Dims in, Dims out) : in_dims(std::move(in)), out_dims(std::move(out)) {}
    virtual ~Impl() = default;
    virtual Tensor forward(const Tensor& x) const = 0;
    virtual Tensor adjoint(const Tensor& y) const = 0;
    virtual std::string name() const = 0;
    /// True when the operator is identically zero.
    virtual bool is_zero() const { return false; }

    const Dims in_dims;
    const Dims out_dims;
  };

  explicit LinOp(std::shared_ptr<const Impl> impl);

  const Dims& in_dims() const { return impl_->in_dims; }
  const Dims& out_dims() const { return impl_->out_dims; }
  std::string name() const { return impl_->name(); }
  bool is_zero() const { return impl_->is_zero(); }

  Tensor apply(const Tensor& x) const;
  Tensor adjoint_apply(const Tensor& y) const;

  /// Cached upper estimate of the spectral norm (power method, 200
  /// iterations, seed 0, safety factor 1.01). Computed on first use.
  double norm_est() const;

 private:
  struct NormCache;
  std::shared_ptr<const Impl> impl_;
  std::shared_ptr<NormCache> cache_;
};

inline constexpr int kDefaultPowerIters = 200;
inline constexpr double kNormSafetyFactor = 1.01;

Tensor op_apply(const LinOp& op, const Tensor& x);
Tensor op_adjoint_apply(const LinOp& op, const Tensor& y);

/// Power method on K*K started from a seeded Gaussian vector. Returns the
/// estimate of ||K|| times the 1.01 safety factor; 0 for the zero operator.
double op_norm_estimate(const LinOp& op, int iters = kDefaultPowerIters, std::uint64_t seed = 0);

namespace ops {

LinOp identity(const Dims& dims);
LinOp scaling(const Dims& dims, double s);
LinOp zero(const Dims& in, const Dims& out);

/// 1-D forward differences, n inputs -> n - 1 outputs.
LinOp forward_diff_1d(std::size_t n);
/// 2-D forward differences with Neumann boundary: (H, W) -> (2, H, W), the
/// difference across the last row (resp. column) is zero.
LinOp forward_diff_2d(std::size_t h, std::size_t w);

/// s * A
LinOp scaled(const LinOp& a, double s);
/// A o B
LinOp compose(const LinOp& a, const LinOp& b);
/// A*
LinOp adjoint_of(const LinOp& a);

/// Block operator. rows[i][j] maps input block j to output block i; an empty
/// optional is a zero block. Input and output are flat concatenations.
/// Every block column must have at least one non-empty entry to fix its
/// shape, and likewise every block row.
LinOp block(const std::vector<std::vector<std::optional<LinOp>>>& rows);
/// x -> [A_1 x; ...; A_n x] (flat output).
LinOp row_stack(const std::vector<LinOp>& blocks);
/// [x_1; ...; x_n] -> sum A_i x_i (flat input).
LinOp col_stack(const std::vector<LinOp>& blocks);

}  // namespace ops

}  // namespace bilevel
