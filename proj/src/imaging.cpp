#include "bilevel/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bilevel/errors.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

Image make_image(Tensor pixels, std::string source) {
  if (pixels.dims().size() != 2) throw DimensionError("image must be 2-D, got " + to_string(pixels.dims()));
  if (!all_finite(pixels)) throw ParameterError("image has non-finite pixels");
  return Image{std::move(pixels), std::move(source), 0};
}

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& b, const std::string& src) : b_(b), src_(src) {}

  std::string token() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
    if (start == pos_) fail("truncated header");
    return b_.substr(start, pos_ - start);
  }

  long number() {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      fail("expected a non-negative integer, got '" + t + "'");
    if (t.size() > 9) fail("number too large: " + t);
    return std::stol(t);
  }

  // Exactly one whitespace byte separates the header from P5 raster data.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) fail("missing raster");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(src_ + ": " + what); }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& b_;
  const std::string& src_;
  std::size_t pos_ = 0;
};

}  // namespace

Image parse_pgm(const std::string& bytes, const std::string& source) {
  HeaderReader rd(bytes, source);
  const std::string magic = rd.token();
  if (magic != "P2" && magic != "P5") rd.fail("unsupported magic '" + magic + "'");
  const long w = rd.number();
  const long h = rd.number();
  if (w <= 0 || h <= 0) rd.fail("image dimensions must be positive");
  const long maxval = rd.number();
  if (maxval != 255) rd.fail("maxval must be 255, got " + std::to_string(maxval));
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<double> px(n);
  if (magic == "P5") {
    const std::size_t start = rd.raster_start();
    if (bytes.size() < start + n) rd.fail("truncated raster");
    for (std::size_t i = 0; i < n; ++i) px[i] = static_cast<unsigned char>(bytes[start + i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const long v = rd.number();
      if (v > 255) rd.fail("pixel value exceeds maxval");
      px[i] = static_cast<double>(v);
    }
  }
  Image img = make_image(Tensor({static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(px)), source);
  return img;
}

Image load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pgm(ss.str(), path.string());
}

void save_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  std::string raster(img.pixels.size(), '\0');
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const double v = std::clamp(img.pixels[i], 0.0, 255.0);
    raster[i] = static_cast<char>(static_cast<unsigned char>(std::nearbyint(v)));
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ParameterError("add_gaussian_noise: sigma must be >= 0");
  Image out = img;
  out.noise_seed = seed;
  if (sigma == 0.0) return out;
  GaussianStream g(seed);
  for (auto& v : out.pixels.data()) v += sigma * g.next();
  return out;
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_dims(a, b, "psnr");
  const double mse = norm_sq(a - b) / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Image& a, const Image& b, double peak) { return psnr(a.pixels, b.pixels, peak); }

namespace {

constexpr int kWin = 11;
constexpr int kRad = kWin / 2;

// Gaussian-weighted mean over every valid 11 x 11 window, separable.
std::vector<double> window_mean(const std::vector<double>& img, std::size_t h, std::size_t w) {
  static const std::array<double, kWin> k = [] {
    std::array<double, kWin> a{};
    double s = 0.0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - kRad;
      a[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      s += a[i];
    }
    for (auto& v : a) v /= s;
    return a;
  }();
  const std::size_t ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < kWin; ++t) s += k[t] * img[i * w + j + t];
      rows[i * ow + j] = s;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < kWin; ++t) s += k[t] * rows[(i + t) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "ssim");
  if (a.dims().size() != 2) throw DimensionError("ssim expects 2-D images");
  const std::size_t h = a.dims()[0], w = a.dims()[1];
  if (h < kWin || w < kWin) throw DimensionError("ssim: image smaller than the 11x11 window");
  const std::size_t n = a.size();
  std::vector<double> x(a.data().begin(), a.data().end()), y(b.data().begin(), b.data().end());
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto ux = window_mean(x, h, w), uy = window_mean(y, h, w);
  const auto uxx = window_mean(xx, h, w), uyy = window_mean(yy, h, w), uxy = window_mean(xy, h, w);
  const double c1 = std::pow(0.01 * 255.0, 2), c2 = std::pow(0.03 * 255.0, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < ux.size(); ++i) {
    const double vx = uxx[i] - ux[i] * ux[i];
    const double vy = uyy[i] - uy[i] * uy[i];
    const double vxy = uxy[i] - ux[i] * uy[i];
    total += (2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2) /
             ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(ux.size());
}

double ssim(const Image& a, const Image& b) { return ssim(a.pixels, b.pixels); }

Image synthetic_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  if (h == 0 || w == 0) throw DimensionError("synthetic_image: empty grid");
  Xoshiro256 rng(seed);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  Tensor px({h, w});
  const double g0 = uni(60.0, 120.0), gi = uni(-40.0, 40.0), gj = uni(-40.0, 40.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      px[i * w + j] = g0 + gi * static_cast<double>(i) / h + gj * static_cast<double>(j) / w;
  const int shapes = 3 + static_cast<int>(rng.next() % 4);
  for (int s = 0; s < shapes; ++s) {
    const double level = uni(20.0, 235.0);
    const double ci = uni(0.0, h), cj = uni(0.0, w);
    const double ri = uni(0.15, 0.4) * h, rj = uni(0.15, 0.4) * w;
    const bool disc = rng.next() & 1u;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double di = (static_cast<double>(i) + 0.5 - ci) / ri;
        const double dj = (static_cast<double>(j) + 0.5 - cj) / rj;
        const bool inside = disc ? di * di + dj * dj <= 1.0 : std::abs(di) <= 1.0 && std::abs(dj) <= 1.0;
        if (inside) px[i * w + j] = level;
      }
  }
  Image img = make_image(std::move(px), "synthetic:" + std::to_string(seed));
  return img;
}

}  // namespace bilevel
