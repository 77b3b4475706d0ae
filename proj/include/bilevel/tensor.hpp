#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bilevel {

using Dims = std::vector<std::size_t>;

std::size_t product(const Dims& dims);
std::string to_string(const Dims& dims);

/// Dense row-major real array. The universal value type for images, dual
/// fields, kernels and stacked block variables.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }
  static Tensor vector(std::initializer_list<double> values);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Same data under a new shape of equal size.
  Tensor reshaped(Dims dims) const;

  void fill(double v);
  /// this += a * x
  void axpy(double a, const Tensor& x);

  Tensor& operator+=(const Tensor& rhs);
  Tensor& operator-=(const Tensor& rhs);
  Tensor& operator*=(double s);

  friend Tensor operator+(Tensor lhs, const Tensor& rhs) { return lhs += rhs; }
  friend Tensor operator-(Tensor lhs, const Tensor& rhs) { return lhs -= rhs; }
  friend Tensor operator*(Tensor lhs, double s) { return lhs *= s; }
  friend Tensor operator*(double s, Tensor rhs) { return rhs *= s; }

 private:
  Dims dims_;
  std::vector<double> data_;
};

void require_same_dims(const Tensor& a, const Tensor& b, const char* where);
void require_dims(const Tensor& a, const Dims& dims, const char* where);

double dot(const Tensor& a, const Tensor& b);
double norm(const Tensor& a);
double norm_sq(const Tensor& a);
bool all_finite(const Tensor& a);

/// Flat concatenation of parts; result has dims {sum of sizes}.
Tensor concat(const std::vector<const Tensor*>& parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// Inverse of concat: slices a flat tensor into the given shapes.
std::vector<Tensor> split(const Tensor& flat, const std::vector<Dims>& shapes);
/// Copies the slice [offset, offset + product(dims)) of a flat tensor.
Tensor slice(const Tensor& flat, std::size_t offset, const Dims& dims);

// F64T: "F64T" magic, u32 ndim, u32 dims[ndim], little-endian f64 payload.
void write_f64t(const Tensor& t, const std::filesystem::path& path);
Tensor read_f64t(const std::filesystem::path& path);
std::string encode_f64t(const Tensor& t);
Tensor decode_f64t(const std::string& bytes);

/// One value per line in row-major order, 17 significant digits.
void write_csv(const Tensor& t, const std::filesystem::path& path);

}  // namespace bilevel
