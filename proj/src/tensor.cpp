#include "bilevel/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "bilevel/errors.hpp"

namespace bilevel {

std::size_t product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Dims& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)), data_(product(dims_), fill) {
  for (auto d : dims_)
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + to_string(dims_));
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  for (auto d : dims_)
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + to_string(dims_));
  if (product(dims_) != data_.size())
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match dims " + to_string(dims_));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Dims dims) const { return Tensor(std::move(dims), data_); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::axpy(double a, const Tensor& x) {
  if (x.size() != size()) throw DimensionError("axpy size mismatch");
  const double* xp = x.data_.data();
  double* yp = data_.data();
  for (std::size_t i = 0, n = data_.size(); i < n; ++i) yp[i] += a * xp[i];
}

Tensor& Tensor::operator+=(const Tensor& rhs) {
  axpy(1.0, rhs);
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& rhs) {
  axpy(-1.0, rhs);
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* where) {
  if (a.dims() != b.dims())
    throw DimensionError(std::string(where) + ": dims " + to_string(a.dims()) + " vs " +
                         to_string(b.dims()));
}

void require_dims(const Tensor& a, const Dims& dims, const char* where) {
  if (a.dims() != dims)
    throw DimensionError(std::string(where) + ": expected " + to_string(dims) + ", got " +
                         to_string(a.dims()));
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("dot size mismatch");
  const double* x = a.data().data();
  const double* y = b.data().data();
  double s = 0.0;
  for (std::size_t i = 0, n = a.size(); i < n; ++i) s += x[i] * y[i];
  return s;
}

double norm_sq(const Tensor& a) { return dot(a, a); }
double norm(const Tensor& a) { return std::sqrt(norm_sq(a)); }

bool all_finite(const Tensor& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor concat(const std::vector<const Tensor*>& parts) {
  std::size_t total = 0;
  for (const auto* p : parts) total += p->size();
  std::vector<double> out;
  out.reserve(total);
  for (const auto* p : parts) out.insert(out.end(), p->data().begin(), p->data().end());
  return Tensor({total}, std::move(out));
}

Tensor concat(std::initializer_list<Tensor> parts) {
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat(ptrs);
}

std::vector<Tensor> split(const Tensor& flat, const std::vector<Dims>& shapes) {
  std::size_t total = 0;
  for (const auto& s : shapes) total += product(s);
  if (total != flat.size())
    throw DimensionError("split: flat size " + std::to_string(flat.size()) +
                         " does not match parts total " + std::to_string(total));
  std::vector<Tensor> out;
  out.reserve(shapes.size());
  std::size_t offset = 0;
  for (const auto& s : shapes) {
    out.push_back(slice(flat, offset, s));
    offset += product(s);
  }
  return out;
}

Tensor slice(const Tensor& flat, std::size_t offset, const Dims& dims) {
  const std::size_t n = product(dims);
  if (offset + n > flat.size()) throw DimensionError("slice out of range");
  auto first = flat.data().begin() + static_cast<std::ptrdiff_t>(offset);
  return Tensor(dims, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("F64T: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

std::string encode_f64t(const Tensor& t) {
  std::string out = "F64T";
  put_u32(out, static_cast<std::uint32_t>(t.dims().size()));
  for (auto d : t.dims()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }
  return out;
}

Tensor decode_f64t(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "F64T") != 0) throw FormatError("F64T: bad magic");
  std::size_t pos = 4;
  const std::uint32_t ndim = get_u32(bytes, pos);
  if (ndim == 0 || ndim > 16) throw FormatError("F64T: invalid ndim " + std::to_string(ndim));
  Dims dims;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = get_u32(bytes, pos);
    if (d == 0) throw FormatError("F64T: zero dimension");
    dims.push_back(d);
  }
  const std::size_t n = product(dims);
  if (bytes.size() != pos + 8 * n) throw FormatError("F64T: payload length mismatch");
  std::vector<double> data(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + 8 * k + i])) << (8 * i);
    data[k] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(dims), std::move(data));
}

void write_f64t(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_f64t(t);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_f64t(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_f64t(ss.str());
}

void write_csv(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (double v : t.data()) out << v << '\n';
}

}  // namespace bilevel
