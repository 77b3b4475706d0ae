#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bilevel/errors.hpp"
#include "bilevel/imaging.hpp"

using namespace bilevel;
namespace fs = std::filesystem;

namespace {

Image pattern(int which, std::size_t h = 24, std::size_t w = 20) {
  Tensor t({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double v = 0;
      if (which == 0) v = static_cast<double>((i * 7 + j * 3) % 256);
      if (which == 1) v = ((i / 4 + j / 4) % 2 == 0) ? 200.0 : 40.0;
      if (which == 2) v = 127.5 + 100.0 * std::sin(i / 3.0) * std::cos(j / 5.0);
      t[i * w + j] = v;
    }
  }
  return make_image(t);
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("bilevel_test_" + name); }

}  // namespace

TEST_CASE("ASCII PGM") {
  const Image img = parse_pgm("P2 2 2 255 0 128 255 64");
  CHECK(img.pixels.dims() == Dims{2, 2});
  CHECK(img.pixels.values() == std::vector<double>{0, 128, 255, 64});
  const Image commented = parse_pgm("P2\n# comment\n2 1\n255\n7 # trailing\n9\n");
  CHECK(commented.pixels.values() == std::vector<double>{7, 9});
}

TEST_CASE("binary PGM") {
  std::string bytes = "P5\n3 1\n255\n";
  bytes += std::string("\x00\x7f\xff", 3);
  CHECK(parse_pgm(bytes).pixels.values() == std::vector<double>{0, 127, 255});
}

TEST_CASE("malformed PGM is rejected") {
  CHECK_THROWS_AS(parse_pgm("P5\n0 2\n255\n"), FormatError);
  CHECK_THROWS_AS(parse_pgm("P5\n1 1\n65535\n\x01\x02"), FormatError);
  CHECK_THROWS_AS(parse_pgm("P6\n1 1\n255\nabc"), FormatError);
  CHECK_THROWS_AS(parse_pgm("P5\n2 2\n255\nab"), FormatError);
  CHECK_THROWS_AS(parse_pgm("P2 1 1 255 256"), FormatError);
  CHECK_THROWS_AS(parse_pgm("P2 2 1 255 3"), FormatError);
  CHECK_THROWS_AS(load_pgm(temp_file("does_not_exist.pgm")), FormatError);
}

TEST_CASE("save and load round-trip") {
  const Image src = pattern(0);
  const fs::path p = temp_file("roundtrip.pgm");
  save_pgm(src, p);
  const Image back = load_pgm(p);
  CHECK(back.pixels.values() == src.pixels.values());
  fs::remove(p);
}

TEST_CASE("saving clamps and rounds half to even") {
  const Image img = make_image(Tensor({1, 6}, std::vector<double>{-3.0, 0.5, 1.5, 2.5, 254.6, 300.0}));
  const fs::path p = temp_file("round.pgm");
  save_pgm(img, p);
  CHECK(load_pgm(p).pixels.values() == std::vector<double>{0, 0, 2, 2, 255, 255});
  fs::remove(p);
}

TEST_CASE("images must be finite 2-D arrays") {
  CHECK_THROWS_AS(make_image(Tensor({4})), DimensionError);
  CHECK_THROWS(make_image(Tensor({1, 1}, std::nan(""))));
}

TEST_CASE("Gaussian noise") {
  const Image clean = make_image(Tensor({128, 128}, 100.0));
  const Image noisy = add_gaussian_noise(clean, 25.5, 7);
  double sum = 0, sq = 0;
  const std::size_t n = clean.pixels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = noisy.pixels[i] - clean.pixels[i];
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  const double sd = std::sqrt((sq - n * mean * mean) / (n - 1));
  CHECK(std::abs(sd - 25.5) <= 0.8);
  CHECK(noisy.noise_seed == 7);
  CHECK(add_gaussian_noise(clean, 25.5, 7).pixels.values() == noisy.pixels.values());
  CHECK(add_gaussian_noise(clean, 25.5, 8).pixels.values() != noisy.pixels.values());
  CHECK(add_gaussian_noise(clean, 0.0, 7).pixels.values() == clean.pixels.values());
  CHECK_THROWS_AS(add_gaussian_noise(clean, -1.0, 7), ParameterError);
}

TEST_CASE("PSNR") {
  const Tensor a({8, 8}, 50.0);
  Tensor b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += (i % 2 ? 1.0 : -1.0);
  CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-5));
  CHECK(psnr(a, a + Tensor({8, 8}, 10.0)) == doctest::Approx(28.1308).epsilon(1e-5));
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a * (1 / 255.0), b * (1 / 255.0), 1.0) == doctest::Approx(48.1308).epsilon(1e-5));
  const Image c = pattern(2);
  const Image n1 = add_gaussian_noise(c, 5.0, 1), n2 = add_gaussian_noise(c, 20.0, 1);
  CHECK(psnr(n1, c) == psnr(c, n1));
  CHECK(psnr(n1, c) > psnr(n2, c));
  CHECK_THROWS_AS(psnr(a, Tensor({8, 7})), DimensionError);
}

TEST_CASE("SSIM against reference values") {
  const Image a = pattern(0), b = pattern(1), c = pattern(2);
  CHECK(ssim(a, b) == doctest::Approx(0.006018629195).epsilon(1e-3));
  CHECK(ssim(a, c) == doctest::Approx(0.185118664724).epsilon(1e-3));
  CHECK(ssim(b, c) == doctest::Approx(0.012354771453).epsilon(1e-3));
  CHECK(ssim(a.pixels, Tensor(a.pixels.dims(), 255.0) - a.pixels) == doctest::Approx(-0.551765619183).epsilon(1e-3));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK_THROWS_AS(ssim(Tensor({10, 30}), Tensor({10, 30})), DimensionError);
}

TEST_CASE("synthetic images are deterministic") {
  const Image s = synthetic_image(32, 32, 5);
  CHECK(s.pixels.dims() == Dims{32, 32});
  CHECK(synthetic_image(32, 32, 5).pixels.values() == s.pixels.values());
  CHECK(synthetic_image(32, 32, 6).pixels.values() != s.pixels.values());
  for (double v : s.pixels.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 255.0);
  }
}
