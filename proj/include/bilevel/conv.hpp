#pragma once

#include <cstdint>

#include "bilevel/linop.hpp"

namespace bilevel {

enum class ConvMode {
  /// Every filter is applied to every input channel separately:
  /// (C, H, W) -> (n, C, H, W). With C = 1 the channel axis is dropped.
  PerChannel,
  /// Channel-mixing layer: theta is (n, C, kh, kw) and
  /// out[o] = sum_c corr(theta[o, c], in[c]), (C, H, W) -> (n, H, W).
  ChannelSum,
};

/// Maps learnable kernel entries theta to the convolution operator K(theta).
///
/// Kernels are applied in correlation orientation (no flip), centred at
/// (kh / 2, kw / 2), with Neumann (replicate-edge) padding so outputs keep
/// the input grid size. K(theta) is linear in theta.
class ConvParametrization {
 public:
  ConvParametrization(std::size_t n_filters, std::size_t kh, std::size_t kw,
                      std::size_t channels = 1, ConvMode mode = ConvMode::PerChannel);

  std::size_t n_filters() const { return n_filters_; }
  std::size_t kh() const { return kh_; }
  std::size_t kw() const { return kw_; }
  std::size_t channels() const { return channels_; }
  ConvMode mode() const { return mode_; }

  Dims theta_dims() const;
  Dims input_dims(std::size_t h, std::size_t w) const;
  Dims output_dims(std::size_t h, std::size_t w) const;

  LinOp op(const Tensor& theta, std::size_t h, std::size_t w) const;

  /// G = d<K(theta) xin, yout>/d theta: correlation of the padded input with
  /// the output field, accumulated per tap.
  Tensor kernel_gradient(const Tensor& xin, const Tensor& yout) const;

  /// Norm of theta -> K(theta) measured in Frobenius norm on the operator
  /// side, for an h x w grid. Power method on the tap Gram matrix, times the
  /// 1.01 safety factor.
  double adjoint_norm(std::size_t h, std::size_t w, int iters = kDefaultPowerIters,
                      std::uint64_t seed = 0) const;

  /// Zero-mean Gaussian kernels (sigma = 0.1 / sqrt(kh * kw)), mean removed
  /// per filter.
  Tensor initial_theta(std::uint64_t seed) const;

 private:
  std::pair<std::size_t, std::size_t> grid_of(const Tensor& xin) const;

  std::size_t n_filters_, kh_, kw_, channels_;
  ConvMode mode_;
};

}  // namespace bilevel
