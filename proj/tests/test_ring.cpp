#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mpcnn/ring.hpp"
#include "mpcnn/tensor_io.hpp"

using namespace mpcnn;

namespace {

RingTensor random_tensor(std::mt19937_64& rng, Shape s) {
  RingTensor t(std::move(s));
  for (auto& v : t.data()) v = rng();
  return t;
}

// Straight nested-loop reference, no shared code with ring_conv2d.
RingTensor naive_conv(const RingTensor& x, const RingTensor& w, std::size_t sh, std::size_t sw,
                      std::size_t ph, std::size_t pw) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t OH = (H + 2 * ph - KH) / sh + 1, OW = (W + 2 * pw - KW) / sw + 1;
  RingTensor y({N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          RingElem acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < KH; ++a)
              for (std::size_t b = 0; b < KW; ++b) {
                const long r = static_cast<long>(i * sh + a) - static_cast<long>(ph);
                const long q = static_cast<long>(j * sw + b) - static_cast<long>(pw);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W))
                  continue;
                acc += x[((n * C + c) * H + r) * W + q] * w[((o * C + c) * KH + a) * KW + b];
              }
          y[((n * O + o) * OH + i) * OW + j] = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("encode examples") {
  CHECK(encode(0.0) == 0);
  CHECK(encode(1.5) == 98304);
  CHECK(encode(-1.0) == ~RingElem{0} - 65535);  // 2^64 - 65536
  CHECK(decode(encode(-3.25)) == -3.25);
  CHECK_THROWS_AS(encode(1e20), EncodeRangeError);
  CHECK_THROWS_AS(encode(std::nan("")), EncodeRangeError);
  CHECK(encode(1.0, FixedPointConfig(20)) == RingElem{1} << 20);
  CHECK_THROWS(FixedPointConfig(0));
}

TEST_CASE("add, sub and neg wrap modulo 2^64") {
  const RingTensor a({2}, std::vector<RingElem>{encode(2), ~RingElem{0}});
  const RingTensor b({2}, std::vector<RingElem>{encode(3), 1});
  const RingTensor s = ring_add(a, b);
  CHECK(s[0] == encode(5));
  CHECK(s[1] == 0);
  std::mt19937_64 rng(1);
  const RingTensor x = random_tensor(rng, {64});
  CHECK(ring_sub(x, x) == RingTensor({64}));
  CHECK_THROWS_AS(ring_add(RingTensor({2}), RingTensor({3})), ShapeError);
}

TEST_CASE("ring_mul_trunc examples") {
  auto mt = [](double a, double b) {
    return ring_mul_trunc(RingTensor::encode(std::vector<double>{a}, {1}),
                          RingTensor::encode(std::vector<double>{b}, {1}))[0];
  };
  CHECK(mt(2, 3) == encode(6));
  CHECK(mt(0.5, 0.5) == encode(0.25));
  CHECK(mt(-1.5, 2) == encode(-3));
}

TEST_CASE("ring_mul_trunc matches exact rational arithmetic") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::int64_t> d(-(std::int64_t{1} << 30), std::int64_t{1} << 30);
  for (int i = 0; i < 10000; ++i) {
    const std::int64_t a = d(rng), b = d(rng);
    const __int128 p = static_cast<__int128>(a) * b;
    // floor division by 2^16
    __int128 q = p / 65536;
    if (p % 65536 != 0 && p < 0) q -= 1;
    const RingTensor r = ring_mul_trunc(RingTensor({1}, std::vector<RingElem>{RingElem(a)}),
                                        RingTensor({1}, std::vector<RingElem>{RingElem(b)}));
    REQUIRE(as_signed(r[0]) == static_cast<std::int64_t>(q));
  }
}

TEST_CASE("msb examples") {
  CHECK(msb(0) == 0);
  CHECK(msb(encode(-0.001)) == 1);
  CHECK(msb(RingElem{1} << 63) == 1);
  CHECK(msb((RingElem{1} << 63) - 1) == 0);
}

TEST_CASE("ring add is commutative and neg is its inverse") {
  std::mt19937_64 rng(3);
  const RingTensor a = random_tensor(rng, {100000});
  const RingTensor b = random_tensor(rng, {100000});
  CHECK(ring_add(a, b) == ring_add(b, a));
  CHECK(ring_add(a, ring_neg(a)) == RingTensor({100000}));
}

TEST_CASE("conv2d against a nested-loop reference") {
  std::mt19937_64 rng(4);
  SUBCASE("CompactCNN geometry: 1x384 input, 32 filters of 1x64") {
    const RingTensor x = random_tensor(rng, {1, 1, 1, 384});
    const RingTensor w = random_tensor(rng, {32, 1, 1, 64});
    const RingTensor y = ring_conv2d(x, w, {});
    CHECK(y.shape() == Shape{1, 32, 1, 321});
    CHECK(y == naive_conv(x, w, 1, 1, 0, 0));
  }
  SUBCASE("random shapes, strides and padding") {
    for (int t = 0; t < 30; ++t) {
      const std::size_t C = 1 + rng() % 3, O = 1 + rng() % 4, K = 1 + rng() % 3;
      const std::size_t H = K + rng() % 6, W = K + rng() % 6, s = 1 + rng() % 2, p = rng() % 2;
      const RingTensor x = random_tensor(rng, {2, C, H, W});
      const RingTensor w = random_tensor(rng, {O, C, K, K});
      ConvGeometry g{s, s, p, p};
      REQUIRE(ring_conv2d(x, w, g) == naive_conv(x, w, s, s, p, p));
    }
  }
  CHECK_THROWS_AS(ring_conv2d(RingTensor({1, 2, 4, 4}), RingTensor({1, 3, 3, 3}), {}), ShapeError);
}

TEST_CASE("matmul against a triple loop") {
  std::mt19937_64 rng(5);
  const RingTensor a = random_tensor(rng, {5, 7});
  const RingTensor b = random_tensor(rng, {7, 3});
  const RingTensor c = ring_matmul(a, b);
  REQUIRE(c.shape() == Shape{5, 3});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      RingElem acc = 0;
      for (std::size_t k = 0; k < 7; ++k) acc += a[i * 7 + k] * b[k * 3 + j];
      CHECK(c[i * 3 + j] == acc);
    }
  CHECK_THROWS_AS(ring_matmul(RingTensor({2, 3}), RingTensor({2, 3})), ShapeError);
}

TEST_CASE("layout helpers") {
  std::mt19937_64 rng(6);
  const RingTensor x = random_tensor(rng, {2, 6, 3, 4});
  const std::vector<std::size_t> sizes{1, 2, 3};
  CHECK(concat(split(x, sizes, 1), 1) == x);

  const RingTensor u = upsample_nearest2x(x);
  CHECK(u.shape() == Shape{2, 6, 6, 8});
  CHECK(downsample2x(u) == x);
  const RingTensor v({1, 1, 1, 1}, std::vector<RingElem>{42});
  CHECK(upsample_nearest2x(v) == RingTensor({1, 1, 2, 2}, RingElem{42}));

  const std::vector<std::size_t> order{0, 2, 3, 1};
  const RingTensor p = permute(x, order);
  CHECK(p.shape() == Shape{2, 3, 4, 6});
  CHECK(p[((1 * 3 + 2) * 4 + 3) * 6 + 5] == x[((1 * 6 + 5) * 3 + 2) * 4 + 3]);

  const RingTensor s = slice_last(x, 1, 2, 2);
  CHECK(s.shape() == Shape{2, 6, 3, 2});
  CHECK(s[1] == x[3]);
}

TEST_CASE("RTF1 round trip and malformed input") {
  RealTensor t{{2, 3}, {1.5f, -2.f, 0.f, 3.25f, 7.f, -0.5f}};
  const auto bytes = serialize_rtf1(t);
  CHECK(bytes.size() == 4 + 1 + 2 * 8 + 6 * 4);
  const RealTensor back = parse_rtf1(bytes);
  CHECK(back.shape == t.shape);
  CHECK(back.values == t.values);
  CHECK(encode_real(t) == RingTensor::encode(std::vector<double>{1.5, -2, 0, 3.25, 7, -0.5},
                                             {2, 3}));

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_rtf1(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(parse_rtf1(bad), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "mpcnn_test_ring.rtf1";
  write_rtf1(path, t);
  CHECK(load_rtf1(path) == encode_real(t));
  std::filesystem::remove(path);
}
