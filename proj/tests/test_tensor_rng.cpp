#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bilevel/errors.hpp"
#include "bilevel/rng.hpp"
#include "bilevel/tensor.hpp"

using namespace bilevel;

TEST_CASE("tensor size must match dims") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(norm_sq(t) == doctest::Approx(6 * 2.25));
}

TEST_CASE("concat and split are inverse") {
  const Tensor a = random_normal({2, 3}, 1), b = random_normal({4}, 2);
  const Tensor flat = concat({a, b});
  REQUIRE(flat.dims() == Dims{10});
  const auto parts = split(flat, {{2, 3}, {4}});
  CHECK(parts[0].values() == a.values());
  CHECK(parts[1].values() == b.values());
  CHECK(slice(flat, 6, {4}).values() == b.values());
  CHECK_THROWS_AS(split(flat, {{2, 3}}), DimensionError);
}

TEST_CASE("f64t roundtrip is bit exact") {
  const Tensor t = random_normal({3, 2, 5}, 9);
  const Tensor back = decode_f64t(encode_f64t(t));
  CHECK(back.dims() == t.dims());
  CHECK(back.values() == t.values());
  const std::string bytes = encode_f64t(t);
  CHECK(bytes.substr(0, 4) == "F64T");
  CHECK(bytes.size() == 4 + 4 + 3 * 4 + 30 * 8);
}

TEST_CASE("f64t rejects bad magic and truncation") {
  std::string bytes = encode_f64t(Tensor({2}, 1.0));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_f64t(bad), FormatError);
  CHECK_THROWS_AS(decode_f64t(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_f64t(bytes + "x"), FormatError);
}

TEST_CASE("csv export writes one value per line") {
  const auto path = std::filesystem::temp_directory_path() / "bilevel_test_tensor.csv";
  write_csv(Tensor::vector({0.1, -2.0, 3.0}), path);
  std::ifstream in(path);
  std::vector<double> vals;
  for (double v; in >> v;) vals.push_back(v);
  CHECK(vals == std::vector<double>{0.1, -2.0, 3.0});
  std::filesystem::remove(path);
}

TEST_CASE("xoshiro256** reference vectors") {
  Xoshiro256 r(std::array<std::uint64_t, 4>{1, 2, 3, 4});
  CHECK(r.next() == 11520ULL);
  CHECK(r.next() == 0ULL);
  CHECK(r.next() == 1509978240ULL);
  CHECK(r.next() == 1215971899390074240ULL);
}

TEST_CASE("splitmix64 reference vectors") {
  std::uint64_t s = 0;
  CHECK(splitmix64(s) == 0xe220a8397b1dcdafULL);
  CHECK(splitmix64(s) == 0x6e789e6aa1b965f4ULL);
  CHECK(splitmix64(s) == 0x06c45d188009454fULL);
}

TEST_CASE("gaussian stream is deterministic and roughly standard") {
  GaussianStream a(5), b(5);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = a.next();
    CHECK(v == b.next());
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("uniform lies in [0, 1)") {
  Xoshiro256 r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}
