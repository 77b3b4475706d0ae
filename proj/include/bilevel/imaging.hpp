#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "bilevel/tensor.hpp"

namespace bilevel {

/// Grey-scale image, dims (H, W), values on the [0, 255] scale.
struct Image {
  Tensor pixels;
  std::string source;
  std::uint64_t noise_seed = 0;

  std::size_t height() const { return pixels.dims()[0]; }
  std::size_t width() const { return pixels.dims()[1]; }
};

Image make_image(Tensor pixels, std::string source = {});

/// P2 (ASCII) and P5 (8-bit binary) PGM; maxval must be 255.
Image load_pgm(const std::filesystem::path& path);
Image parse_pgm(const std::string& bytes, const std::string& source = "<memory>");
/// Writes P5. Values are clamped to [0, 255] and rounded half-to-even.
void save_pgm(const Image& img, const std::filesystem::path& path);

/// Adds i.i.d. N(0, sigma^2) noise per pixel. The result is not clamped.
Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed);

/// 10 log10(peak^2 / MSE); +inf when the images coincide.
double psnr(const Image& a, const Image& b, double peak = 255.0);
double psnr(const Tensor& a, const Tensor& b, double peak = 255.0);

/// Mean SSIM over all valid 11 x 11 Gaussian windows (sigma 1.5),
/// C1 = (0.01 * 255)^2, C2 = (0.03 * 255)^2.
double ssim(const Image& a, const Image& b);
double ssim(const Tensor& a, const Tensor& b);

/// Deterministic piecewise-smooth test image (rectangles, discs and a
/// gentle gradient) on the [0, 255] scale.
Image synthetic_image(std::size_t h, std::size_t w, std::uint64_t seed);

}  // namespace bilevel
