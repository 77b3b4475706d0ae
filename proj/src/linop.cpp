#include "bilevel/linop.hpp"

#include <cmath>
#include <mutex>

#include "bilevel/errors.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

struct LinOp::NormCache {
  std::once_flag once;
  double value = 0.0;
};

LinOp::LinOp(std::shared_ptr<const Impl> impl)
    : impl_(std::move(impl)), cache_(std::make_shared<NormCache>()) {
  if (!impl_) throw SpecError("LinOp: null implementation");
}

Tensor LinOp::apply(const Tensor& x) const {
  require_dims(x, in_dims(), "LinOp::apply");
  return impl_->forward(x);
}

Tensor LinOp::adjoint_apply(const Tensor& y) const {
  require_dims(y, out_dims(), "LinOp::adjoint_apply");
  return impl_->adjoint(y);
}

double LinOp::norm_est() const {
  std::call_once(cache_->once, [this] { cache_->value = op_norm_estimate(*this); });
  return cache_->value;
}

Tensor op_apply(const LinOp& op, const Tensor& x) { return op.apply(x); }
Tensor op_adjoint_apply(const LinOp& op, const Tensor& y) { return op.adjoint_apply(y); }

double op_norm_estimate(const LinOp& op, int iters, std::uint64_t seed) {
  if (iters < 1) throw ParameterError("op_norm_estimate: iters must be >= 1");
  if (op.is_zero()) return 0.0;
  Tensor v = random_normal(op.in_dims(), seed);
  double nv = norm(v);
  if (nv == 0.0) return 0.0;
  v *= 1.0 / nv;
  double best = 0.0;
  for (int k = 0; k < iters; ++k) {
    const Tensor kv = op.apply(v);
    best = std::max(best, norm(kv));
    Tensor w = op.adjoint_apply(kv);
    const double nw = norm(w);
    if (nw == 0.0) break;
    w *= 1.0 / nw;
    v = std::move(w);
  }
  return kNormSafetyFactor * best;
}

namespace ops {
namespace {

class Identity final : public LinOp::Impl {
 public:
  explicit Identity(const Dims& d) : Impl(d, d) {}
  Tensor forward(const Tensor& x) const override { return x; }
  Tensor adjoint(const Tensor& y) const override { return y; }
  std::string name() const override { return "identity"; }
};

class Scaling final : public LinOp::Impl {
 public:
  Scaling(const Dims& d, double s) : Impl(d, d), s_(s) {}
  Tensor forward(const Tensor& x) const override { return x * s_; }
  Tensor adjoint(const Tensor& y) const override { return y * s_; }
  std::string name() const override { return "scaling"; }
  bool is_zero() const override { return s_ == 0.0; }

 private:
  double s_;
};

class Zero final : public LinOp::Impl {
 public:
  Zero(const Dims& in, const Dims& out) : Impl(in, out) {}
  Tensor forward(const Tensor&) const override { return Tensor(out_dims); }
  Tensor adjoint(const Tensor&) const override { return Tensor(in_dims); }
  std::string name() const override { return "zero"; }
  bool is_zero() const override { return true; }
};

class Diff1d final : public LinOp::Impl {
 public:
  explicit Diff1d(std::size_t n) : Impl({n}, {n - 1}) {}
  Tensor forward(const Tensor& x) const override {
    Tensor y(out_dims);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) y[i] = x[i + 1] - x[i];
    return y;
  }
  Tensor adjoint(const Tensor& y) const override {
    Tensor x(in_dims);
    for (std::size_t i = 0; i < y.size(); ++i) {
      x[i + 1] += y[i];
      x[i] -= y[i];
    }
    return x;
  }
  std::string name() const override { return "diff1d"; }
};

class Diff2d final : public LinOp::Impl {
 public:
  Diff2d(std::size_t h, std::size_t w) : Impl({h, w}, {2, h, w}), h_(h), w_(w) {}

  Tensor forward(const Tensor& x) const override {
    Tensor y(out_dims);
    const std::size_t n = h_ * w_;
    for (std::size_t i = 0; i < h_; ++i)
      for (std::size_t j = 0; j < w_; ++j) {
        const std::size_t p = i * w_ + j;
        if (i + 1 < h_) y[p] = x[p + w_] - x[p];
        if (j + 1 < w_) y[n + p] = x[p + 1] - x[p];
      }
    return y;
  }

  Tensor adjoint(const Tensor& y) const override {
    Tensor x(in_dims);
    const std::size_t n = h_ * w_;
    for (std::size_t i = 0; i < h_; ++i)
      for (std::size_t j = 0; j < w_; ++j) {
        const std::size_t p = i * w_ + j;
        if (i + 1 < h_) {
          x[p + w_] += y[p];
          x[p] -= y[p];
        }
        if (j + 1 < w_) {
          x[p + 1] += y[n + p];
          x[p] -= y[n + p];
        }
      }
    return x;
  }
  std::string name() const override { return "diff2d"; }

 private:
  std::size_t h_, w_;
};

class Scaled final : public LinOp::Impl {
 public:
  Scaled(LinOp a, double s) : Impl(a.in_dims(), a.out_dims()), a_(std::move(a)), s_(s) {}
  Tensor forward(const Tensor& x) const override { return a_.apply(x) * s_; }
  Tensor adjoint(const Tensor& y) const override { return a_.adjoint_apply(y) * s_; }
  std::string name() const override { return "scaled(" + a_.name() + ")"; }
  bool is_zero() const override { return s_ == 0.0 || a_.is_zero(); }

 private:
  LinOp a_;
  double s_;
};

class Composed final : public LinOp::Impl {
 public:
  Composed(LinOp a, LinOp b) : Impl(b.in_dims(), a.out_dims()), a_(std::move(a)), b_(std::move(b)) {}
  Tensor forward(const Tensor& x) const override { return a_.apply(b_.apply(x)); }
  Tensor adjoint(const Tensor& y) const override { return b_.adjoint_apply(a_.adjoint_apply(y)); }
  std::string name() const override { return a_.name() + "*" + b_.name(); }
  bool is_zero() const override { return a_.is_zero() || b_.is_zero(); }

 private:
  LinOp a_, b_;
};

class Adjoint final : public LinOp::Impl {
 public:
  explicit Adjoint(LinOp a) : Impl(a.out_dims(), a.in_dims()), a_(std::move(a)) {}
  Tensor forward(const Tensor& x) const override { return a_.adjoint_apply(x); }
  Tensor adjoint(const Tensor& y) const override { return a_.apply(y); }
  std::string name() const override { return "adj(" + a_.name() + ")"; }
  bool is_zero() const override { return a_.is_zero(); }

 private:
  LinOp a_;
};

Dims stacked_dims(const std::vector<Dims>& parts) {
  if (parts.size() == 1) return parts.front();
  std::size_t total = 0;
  for (const auto& p : parts) total += product(p);
  return {total};
}

class Block final : public LinOp::Impl {
 public:
  using Grid = std::vector<std::vector<std::optional<LinOp>>>;

  Block(Grid grid, std::vector<Dims> in_parts, std::vector<Dims> out_parts)
      : Impl(stacked_dims(in_parts), stacked_dims(out_parts)),
        grid_(std::move(grid)),
        in_parts_(std::move(in_parts)),
        out_parts_(std::move(out_parts)) {}

  Tensor forward(const Tensor& x) const override {
    const auto xs = pieces(x, in_parts_);
    std::vector<Tensor> ys;
    for (std::size_t i = 0; i < out_parts_.size(); ++i) {
      Tensor yi(out_parts_[i]);
      for (std::size_t j = 0; j < in_parts_.size(); ++j)
        if (grid_[i][j]) yi += grid_[i][j]->apply(xs[j]);
      ys.push_back(std::move(yi));
    }
    return join(ys);
  }

  Tensor adjoint(const Tensor& y) const override {
    const auto ys = pieces(y, out_parts_);
    std::vector<Tensor> xs;
    for (std::size_t j = 0; j < in_parts_.size(); ++j) {
      Tensor xj(in_parts_[j]);
      for (std::size_t i = 0; i < out_parts_.size(); ++i)
        if (grid_[i][j]) xj += grid_[i][j]->adjoint_apply(ys[i]);
      xs.push_back(std::move(xj));
    }
    return join(xs);
  }

  std::string name() const override { return "block"; }

  bool is_zero() const override {
    for (const auto& row : grid_)
      for (const auto& b : row)
        if (b && !b->is_zero()) return false;
    return true;
  }

 private:
  static std::vector<Tensor> pieces(const Tensor& t, const std::vector<Dims>& parts) {
    if (parts.size() == 1) return {t};
    return split(t, parts);
  }
  static Tensor join(const std::vector<Tensor>& parts) {
    if (parts.size() == 1) return parts.front();
    std::vector<const Tensor*> ptrs;
    for (const auto& p : parts) ptrs.push_back(&p);
    return concat(ptrs);
  }

  Grid grid_;
  std::vector<Dims> in_parts_;
  std::vector<Dims> out_parts_;
};

}  // namespace

LinOp identity(const Dims& dims) { return LinOp(std::make_shared<Identity>(dims)); }
LinOp scaling(const Dims& dims, double s) { return LinOp(std::make_shared<Scaling>(dims, s)); }
LinOp zero(const Dims& in, const Dims& out) { return LinOp(std::make_shared<Zero>(in, out)); }

LinOp forward_diff_1d(std::size_t n) {
  if (n < 2) throw DimensionError("forward_diff_1d needs n >= 2");
  return LinOp(std::make_shared<Diff1d>(n));
}

LinOp forward_diff_2d(std::size_t h, std::size_t w) {
  return LinOp(std::make_shared<Diff2d>(h, w));
}

LinOp scaled(const LinOp& a, double s) { return LinOp(std::make_shared<Scaled>(a, s)); }

LinOp compose(const LinOp& a, const LinOp& b) {
  if (a.in_dims() != b.out_dims())
    throw DimensionError("compose: " + to_string(a.in_dims()) + " vs " + to_string(b.out_dims()));
  return LinOp(std::make_shared<Composed>(a, b));
}

LinOp adjoint_of(const LinOp& a) { return LinOp(std::make_shared<Adjoint>(a)); }

LinOp block(const std::vector<std::vector<std::optional<LinOp>>>& rows) {
  if (rows.empty() || rows.front().empty()) throw DimensionError("block: empty grid");
  const std::size_t nr = rows.size();
  const std::size_t nc = rows.front().size();
  std::vector<std::optional<Dims>> in(nc), out(nr);
  for (std::size_t i = 0; i < nr; ++i) {
    if (rows[i].size() != nc) throw DimensionError("block: ragged grid");
    for (std::size_t j = 0; j < nc; ++j) {
      const auto& b = rows[i][j];
      if (!b) continue;
      if (in[j] && *in[j] != b->in_dims()) throw DimensionError("block: column shape conflict");
      if (out[i] && *out[i] != b->out_dims()) throw DimensionError("block: row shape conflict");
      in[j] = b->in_dims();
      out[i] = b->out_dims();
    }
  }
  std::vector<Dims> in_parts, out_parts;
  for (auto& d : in) {
    if (!d) throw DimensionError("block: column without any operator");
    in_parts.push_back(*d);
  }
  for (auto& d : out) {
    if (!d) throw DimensionError("block: row without any operator");
    out_parts.push_back(*d);
  }
  return LinOp(std::make_shared<Block>(rows, std::move(in_parts), std::move(out_parts)));
}

LinOp row_stack(const std::vector<LinOp>& blocks) {
  std::vector<std::vector<std::optional<LinOp>>> grid;
  for (const auto& b : blocks) grid.push_back({b});
  return block(grid);
}

LinOp col_stack(const std::vector<LinOp>& blocks) {
  std::vector<std::optional<LinOp>> row(blocks.begin(), blocks.end());
  return block({row});
}

}  // namespace ops
}  // namespace bilevel
