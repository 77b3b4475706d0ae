#include "bilevel/conv.hpp"

#include <algorithm>
#include <cmath>

#include "bilevel/errors.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {
namespace {

// Replicate-edge index tables for one (h, w) grid and kernel size.
struct Stencil {
  std::size_t h, w, kh, kw;
  std::vector<std::size_t> rmap;  // rmap[a * h + i] = clamp(i + a - kh/2)
  // Columns: for tap b the interior range [jlo, jhi) maps j -> j + b - kw/2;
  // j < jlo maps to 0 and j >= jhi maps to w - 1.
  std::vector<std::ptrdiff_t> coff;
  std::vector<std::size_t> jlo, jhi;

  Stencil(std::size_t h_, std::size_t w_, std::size_t kh_, std::size_t kw_)
      : h(h_), w(w_), kh(kh_), kw(kw_), rmap(kh_ * h_), coff(kw_), jlo(kw_), jhi(kw_) {
    const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t i = 0; i < h; ++i) {
        const auto r = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(kh / 2);
        rmap[a * h + i] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r, 0, ih - 1));
      }
    for (std::size_t b = 0; b < kw; ++b) {
      const auto off = static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>(kw / 2);
      coff[b] = off;
      jlo[b] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(-off, 0, iw));
      jhi[b] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(iw - off, 0, iw));
      if (jhi[b] < jlo[b]) jhi[b] = jlo[b];
    }
  }

  // out += corr(k, in)
  void correlate(const double* k, const double* in, double* out) const {
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t i = 0; i < h; ++i) {
        const double* row = in + rmap[a * h + i] * w;
        double* orow = out + i * w;
        for (std::size_t b = 0; b < kw; ++b) {
          const double t = k[a * kw + b];
          if (t == 0.0) continue;
          const std::size_t lo = jlo[b], hi = jhi[b];
          for (std::size_t j = 0; j < lo; ++j) orow[j] += t * row[0];
          const double* src = row + coff[b];
          for (std::size_t j = lo; j < hi; ++j) orow[j] += t * src[j];
          for (std::size_t j = hi; j < w; ++j) orow[j] += t * row[w - 1];
        }
      }
  }

  // in += corr(k, .)^T out
  void correlate_adjoint(const double* k, const double* out, double* in) const {
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t i = 0; i < h; ++i) {
        double* row = in + rmap[a * h + i] * w;
        const double* orow = out + i * w;
        for (std::size_t b = 0; b < kw; ++b) {
          const double t = k[a * kw + b];
          if (t == 0.0) continue;
          const std::size_t lo = jlo[b], hi = jhi[b];
          double edge = 0.0;
          for (std::size_t j = 0; j < lo; ++j) edge += orow[j];
          row[0] += t * edge;
          double* dst = row + coff[b];
          for (std::size_t j = lo; j < hi; ++j) dst[j] += t * orow[j];
          edge = 0.0;
          for (std::size_t j = hi; j < w; ++j) edge += orow[j];
          row[w - 1] += t * edge;
        }
      }
  }

  // g[a, b] += sum_ij out[i, j] * in[clamp(i + a), clamp(j + b)]
  void gradient(const double* in, const double* out, double* g) const {
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t i = 0; i < h; ++i) {
        const double* row = in + rmap[a * h + i] * w;
        const double* orow = out + i * w;
        for (std::size_t b = 0; b < kw; ++b) {
          const std::size_t lo = jlo[b], hi = jhi[b];
          double s = 0.0;
          for (std::size_t j = 0; j < lo; ++j) s += orow[j] * row[0];
          const double* src = row + coff[b];
          for (std::size_t j = lo; j < hi; ++j) s += orow[j] * src[j];
          for (std::size_t j = hi; j < w; ++j) s += orow[j] * row[w - 1];
          g[a * kw + b] += s;
        }
      }
  }

  // Number of rows i with clamp(i + a1) == clamp(i + a2); same for columns.
  std::vector<double> row_coincidence() const {
    std::vector<double> r(kh * kh, 0.0);
    for (std::size_t a1 = 0; a1 < kh; ++a1)
      for (std::size_t a2 = 0; a2 < kh; ++a2)
        for (std::size_t i = 0; i < h; ++i)
          if (rmap[a1 * h + i] == rmap[a2 * h + i]) r[a1 * kh + a2] += 1.0;
    return r;
  }

  std::size_t col_index(std::size_t b, std::size_t j) const {
    if (j < jlo[b]) return 0;
    if (j >= jhi[b]) return w - 1;
    return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + coff[b]);
  }

  std::vector<double> col_coincidence() const {
    std::vector<double> c(kw * kw, 0.0);
    for (std::size_t b1 = 0; b1 < kw; ++b1)
      for (std::size_t b2 = 0; b2 < kw; ++b2)
        for (std::size_t j = 0; j < w; ++j)
          if (col_index(b1, j) == col_index(b2, j)) c[b1 * kw + b2] += 1.0;
    return c;
  }
};

class ConvOp final : public LinOp::Impl {
 public:
  ConvOp(const ConvParametrization& p, Tensor theta, std::size_t h, std::size_t w)
      : Impl(p.input_dims(h, w), p.output_dims(h, w)),
        n_(p.n_filters()),
        c_(p.channels()),
        mode_(p.mode()),
        theta_(std::move(theta)),
        st_(h, w, p.kh(), p.kw()) {
    for (double v : theta_.data())
      if (v != 0.0) {
        zero_ = false;
        break;
      }
  }

  Tensor forward(const Tensor& x) const override {
    Tensor y(out_dims);
    const std::size_t hw = st_.h * st_.w, taps = st_.kh * st_.kw;
    const double* th = theta_.data().data();
    const double* xp = x.data().data();
    double* yp = y.data().data();
    if (mode_ == ConvMode::PerChannel) {
      for (std::size_t f = 0; f < n_; ++f)
        for (std::size_t c = 0; c < c_; ++c)
          st_.correlate(th + f * taps, xp + c * hw, yp + (f * c_ + c) * hw);
    } else {
      for (std::size_t o = 0; o < n_; ++o)
        for (std::size_t c = 0; c < c_; ++c)
          st_.correlate(th + (o * c_ + c) * taps, xp + c * hw, yp + o * hw);
    }
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    Tensor x(in_dims);
    const std::size_t hw = st_.h * st_.w, taps = st_.kh * st_.kw;
    const double* th = theta_.data().data();
    const double* yp = y.data().data();
    double* xp = x.data().data();
    if (mode_ == ConvMode::PerChannel) {
      for (std::size_t f = 0; f < n_; ++f)
        for (std::size_t c = 0; c < c_; ++c)
          st_.correlate_adjoint(th + f * taps, yp + (f * c_ + c) * hw, xp + c * hw);
    } else {
      for (std::size_t o = 0; o < n_; ++o)
        for (std::size_t c = 0; c < c_; ++c)
          st_.correlate_adjoint(th + (o * c_ + c) * taps, yp + o * hw, xp + c * hw);
    }
    return x;
  }

  std::string name() const override { return "conv"; }
  bool is_zero() const override { return zero_; }

 private:
  std::size_t n_, c_;
  ConvMode mode_;
  Tensor theta_;
  Stencil st_;
  bool zero_ = true;
};

}  // namespace

ConvParametrization::ConvParametrization(std::size_t n_filters, std::size_t kh, std::size_t kw,
                                         std::size_t channels, ConvMode mode)
    : n_filters_(n_filters), kh_(kh), kw_(kw), channels_(channels), mode_(mode) {
  if (n_filters == 0 || kh == 0 || kw == 0 || channels == 0)
    throw ParameterError("ConvParametrization: all sizes must be positive");
}

Dims ConvParametrization::theta_dims() const {
  if (mode_ == ConvMode::ChannelSum) return {n_filters_, channels_, kh_, kw_};
  return {n_filters_, kh_, kw_};
}

Dims ConvParametrization::input_dims(std::size_t h, std::size_t w) const {
  if (channels_ == 1) return {h, w};
  return {channels_, h, w};
}

Dims ConvParametrization::output_dims(std::size_t h, std::size_t w) const {
  if (mode_ == ConvMode::ChannelSum || channels_ == 1) return {n_filters_, h, w};
  return {n_filters_, channels_, h, w};
}

LinOp ConvParametrization::op(const Tensor& theta, std::size_t h, std::size_t w) const {
  require_dims(theta, theta_dims(), "ConvParametrization::op theta");
  return LinOp(std::make_shared<ConvOp>(*this, theta, h, w));
}

std::pair<std::size_t, std::size_t> ConvParametrization::grid_of(const Tensor& xin) const {
  const auto& d = xin.dims();
  if (d.size() < 2) throw DimensionError("kernel_gradient: input must be at least 2-D");
  const std::size_t h = d[d.size() - 2], w = d[d.size() - 1];
  require_dims(xin, input_dims(h, w), "kernel_gradient xin");
  return {h, w};
}

Tensor ConvParametrization::kernel_gradient(const Tensor& xin, const Tensor& yout) const {
  const auto [h, w] = grid_of(xin);
  require_dims(yout, output_dims(h, w), "kernel_gradient yout");
  Stencil st(h, w, kh_, kw_);
  Tensor g(theta_dims());
  const std::size_t hw = h * w, taps = kh_ * kw_;
  const double* xp = xin.data().data();
  const double* yp = yout.data().data();
  double* gp = g.data().data();
  if (mode_ == ConvMode::PerChannel) {
    for (std::size_t f = 0; f < n_filters_; ++f)
      for (std::size_t c = 0; c < channels_; ++c)
        st.gradient(xp + c * hw, yp + (f * channels_ + c) * hw, gp + f * taps);
  } else {
    for (std::size_t o = 0; o < n_filters_; ++o)
      for (std::size_t c = 0; c < channels_; ++c)
        st.gradient(xp + c * hw, yp + o * hw, gp + (o * channels_ + c) * taps);
  }
  return g;
}

double ConvParametrization::adjoint_norm(std::size_t h, std::size_t w, int iters,
                                         std::uint64_t seed) const {
  if (iters < 1) throw ParameterError("adjoint_norm: iters must be >= 1");
  Stencil st(h, w, kh_, kw_);
  const auto r = st.row_coincidence();
  const auto c = st.col_coincidence();
  const std::size_t taps = kh_ * kw_;
  // Tap Gram matrix M = R (x) C.
  auto gram = [&](const std::vector<double>& v) {
    std::vector<double> out(taps, 0.0);
    for (std::size_t a1 = 0; a1 < kh_; ++a1)
      for (std::size_t b1 = 0; b1 < kw_; ++b1) {
        double s = 0.0;
        for (std::size_t a2 = 0; a2 < kh_; ++a2)
          for (std::size_t b2 = 0; b2 < kw_; ++b2)
            s += r[a1 * kh_ + a2] * c[b1 * kw_ + b2] * v[a2 * kw_ + b2];
        out[a1 * kw_ + b1] = s;
      }
    return out;
  };
  Tensor start = random_normal({taps}, seed);
  std::vector<double> v(start.data().begin(), start.data().end());
  auto normalize = [](std::vector<double>& x) {
    double n = 0.0;
    for (double e : x) n += e * e;
    n = std::sqrt(n);
    for (double& e : x) e /= n;
  };
  normalize(v);
  double lambda = 0.0;
  for (int k = 0; k < iters; ++k) {
    auto mv = gram(v);
    double q = 0.0;
    for (std::size_t i = 0; i < taps; ++i) q += v[i] * mv[i];
    lambda = std::max(lambda, q);
    v = std::move(mv);
    normalize(v);
  }
  const double multiplicity = mode_ == ConvMode::PerChannel ? static_cast<double>(channels_) : 1.0;
  return kNormSafetyFactor * std::sqrt(multiplicity * lambda);
}

Tensor ConvParametrization::initial_theta(std::uint64_t seed) const {
  const std::size_t taps = kh_ * kw_;
  Tensor theta = random_normal(theta_dims(), seed, 0.1 / std::sqrt(static_cast<double>(taps)));
  for (std::size_t f = 0; f < theta.size() / taps; ++f) {
    double mean = 0.0;
    for (std::size_t t = 0; t < taps; ++t) mean += theta[f * taps + t];
    mean /= static_cast<double>(taps);
    for (std::size_t t = 0; t < taps; ++t) theta[f * taps + t] -= mean;
  }
  return theta;
}

}  // namespace bilevel
