#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mpcnn/approx.hpp"
#include "two_party.hpp"

using namespace mpcnn;
using mpcnn::test::open_after;
using mpcnn::test::run_two_party;

namespace {

std::vector<double> grid(double lo, double hi, double step) {
  std::vector<double> g;
  for (double v = lo; v <= hi + 1e-12; v += step) g.push_back(v);
  return g;
}

std::vector<double> log_grid(double lo, double hi, int per_octave) {
  std::vector<double> g;
  for (double v = lo; v <= hi * (1 + 1e-12); v *= std::exp2(1.0 / per_octave)) g.push_back(v);
  return g;
}

template <class F>
std::vector<double> secure(const std::vector<double>& xs, F f, Transcript* t = nullptr) {
  const RingTensor x = RingTensor::encode(xs, {xs.size()});
  const RingTensor y = open_after(x, f, {}, t);
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = decode(y[i]);
  return out;
}

struct Err {
  double abs = 0, rel = 0;
  double worst_x = 0;
};

template <class G>
Err measure(const std::vector<double>& xs, const std::vector<double>& ys, G truth) {
  Err e;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double want = truth(xs[i]);
    const double a = std::abs(ys[i] - want);
    if (a > e.abs) {
      e.abs = a;
      e.worst_x = xs[i];
    }
    e.rel = std::max(e.rel, a / std::abs(want));
  }
  return e;
}

const ApproxConfig kCfg{};

}  // namespace

TEST_CASE("exp") {
  SUBCASE("examples") {
    const auto y = secure({0, 1, -1}, [](ProtocolCtx& c, const ArithShare& s) {
      return sec_exp(c, s);
    });
    CHECK(y[0] == doctest::Approx(1).epsilon(1e-3));
    CHECK(std::abs(y[1] - 2.71828) <= 1e-2);
    CHECK(std::abs(y[2] - 0.36788) <= 1e-2);
  }
  SUBCASE("grid sweep over the domain") {
    const auto xs = grid(-16, 8, 1.0 / 64);
    const auto ys = secure(xs, [](ProtocolCtx& c, const ArithShare& s) { return sec_exp(c, s); });
    const Err e = measure(xs, ys, [](double v) { return std::exp(v); });
    INFO("worst x = " << e.worst_x << " abs = " << e.abs << " rel = " << e.rel);
    // 1e-2 absolute on the whole domain; near exp(8) ~ 2981 that is a 3e-6 relative budget.
    CHECK(e.abs <= 1e-2);
  }
  SUBCASE("monotone on -4..4 step 1/4") {
    const auto ys = secure(grid(-4, 4, 0.25), [](ProtocolCtx& c, const ArithShare& s) {
      return sec_exp(c, s);
    });
    for (std::size_t i = 1; i < ys.size(); ++i) CHECK(ys[i] > ys[i - 1]);
  }
}

TEST_CASE("reciprocal") {
  const auto y = secure({1, 4}, [](ProtocolCtx& c, const ArithShare& s) {
    return sec_reciprocal(c, s);
  });
  CHECK(std::abs(y[0] - 1) <= 1e-3);
  CHECK(std::abs(y[1] - 0.25) <= 1e-3 * 0.25 + 1.0 / 65536);

  const auto xs = log_grid(1.0 / 64, 4096, 32);
  const auto ys = secure(xs, [](ProtocolCtx& c, const ArithShare& s) {
    return sec_reciprocal(c, s);
  });
  const Err e = measure(xs, ys, [](double v) { return 1 / v; });
  INFO("worst x = " << e.worst_x << " rel = " << e.rel);
  // Relative 1e-3, except where 1/x itself is within a few LSBs of zero.
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double want = 1 / xs[i];
    REQUIRE(std::abs(ys[i] - want) <= std::max(1e-3 * want, 2.0 / 65536));
    REQUIRE(std::abs(xs[i] * ys[i] - 1) <= 1e-2 + xs[i] * 2.0 / 65536);
  }
}

TEST_CASE("rsqrt") {
  const auto y = secure({1, 4}, [](ProtocolCtx& c, const ArithShare& s) {
    return sec_rsqrt(c, s);
  });
  CHECK(std::abs(y[0] - 1) <= 1e-2);
  CHECK(std::abs(y[1] - 0.5) <= 5e-3);

  const auto xs = log_grid(1.0 / 64, 1024, 32);
  const auto ys = secure(xs, [](ProtocolCtx& c, const ArithShare& s) { return sec_rsqrt(c, s); });
  const Err e = measure(xs, ys, [](double v) { return 1 / std::sqrt(v); });
  INFO("worst x = " << e.worst_x << " rel = " << e.rel);
  CHECK(e.rel <= 1e-2);
  for (std::size_t i = 0; i < xs.size(); ++i)
    REQUIRE(std::abs(ys[i] * ys[i] * xs[i] - 1) <= 2e-2);
}

TEST_CASE("sigmoid and silu") {
  const auto xs = grid(-16, 16, 1.0 / 16);
  const auto sg = secure(xs, [](ProtocolCtx& c, const ArithShare& s) { return sec_sigmoid(c, s); });
  const auto sl = secure(xs, [](ProtocolCtx& c, const ArithShare& s) { return sec_silu(c, s); });
  const auto sig = [](double v) { return 1 / (1 + std::exp(-v)); };
  CHECK(measure(xs, sg, sig).abs <= 2e-2);
  CHECK(measure(xs, sl, [&](double v) { return v * sig(v); }).abs <= 2e-2);
  // xs is symmetric around 0.
  const std::size_t n = xs.size();
  for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(sg[i] + sg[n - 1 - i] - 1) <= 4e-2);
  const std::size_t zero = n / 2;
  REQUIRE(xs[zero] == 0);
  CHECK(std::abs(sg[zero] - 0.5) <= 2e-2);
  CHECK(std::abs(sl[zero]) <= 2e-2);
  const std::size_t three = zero + 48;
  REQUIRE(xs[three] == 3);
  CHECK(std::abs(sl[three] - 2.8577) <= 2e-2);
}

TEST_CASE("elu") {
  const RingTensor two = RingTensor::encode(std::vector<double>{2, 0.5}, {2});
  CHECK(open_after(two, [](ProtocolCtx& c, const ArithShare& s) { return sec_elu(c, s); }) == two);

  const auto y = secure({0, -1}, [](ProtocolCtx& c, const ArithShare& s) { return sec_elu(c, s); });
  CHECK(std::abs(y[0]) <= 2e-2);
  CHECK(std::abs(y[1] + 0.6321) <= 2e-2);

  const auto xs = grid(-16, 8, 1.0 / 32);
  const auto ys = secure(xs, [](ProtocolCtx& c, const ArithShare& s) { return sec_elu(c, s); });
  CHECK(measure(xs, ys, [](double v) { return v > 0 ? v : std::expm1(v); }).abs <= 2e-2);
}

TEST_CASE("log") {
  const auto y = secure({1, std::exp(1.0)}, [](ProtocolCtx& c, const ArithShare& s) {
    return sec_log(c, s);
  });
  CHECK(std::abs(y[0]) <= 2e-2);
  CHECK(std::abs(y[1] - 1) <= 2e-2);

  const auto xs = log_grid(1.0 / 64, 64, 64);
  const auto ys = secure(xs, [](ProtocolCtx& c, const ArithShare& s) { return sec_log(c, s); });
  const Err e = measure(xs, ys, [](double v) { return std::log(v); });
  INFO("worst x = " << e.worst_x << " abs = " << e.abs);
  CHECK(e.abs <= 2e-2);

  // log(x*y) ~ log x + log y for products that stay in the domain.
  std::vector<double> a, b, ab;
  for (double u : log_grid(1.0 / 8, 8, 4))
    for (double v : log_grid(1.0 / 8, 8, 4)) {
      a.push_back(u);
      b.push_back(v);
      ab.push_back(u * v);
    }
  const auto la = secure(a, [](ProtocolCtx& c, const ArithShare& s) { return sec_log(c, s); });
  const auto lb = secure(b, [](ProtocolCtx& c, const ArithShare& s) { return sec_log(c, s); });
  const auto lab = secure(ab, [](ProtocolCtx& c, const ArithShare& s) { return sec_log(c, s); });
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(lab[i] - la[i] - lb[i]) <= 6e-2);
}

TEST_CASE("sec_max") {
  const RingTensor one = RingTensor::encode(std::vector<double>{-3.5}, {1, 1});
  CHECK(open_after(one, [](ProtocolCtx& c, const ArithShare& s) { return sec_max(c, s); }) ==
        RingTensor::encode(std::vector<double>{-3.5}, {1}));
  const RingTensor v = RingTensor::encode(std::vector<double>{1, 5, 3}, {1, 3});
  CHECK(open_after(v, [](ProtocolCtx& c, const ArithShare& s) { return sec_max(c, s); }) ==
        RingTensor::encode(std::vector<double>{5}, {1}));

  // 10^4 random vectors, lengths 1..64, grouped by length.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-100, 100);
  std::vector<RingTensor> inputs;
  std::size_t total = 0;
  for (std::size_t len = 1; len <= 64; ++len) {
    const std::size_t rows = len == 64 ? 10000 - total : 10000 / 64;
    RingTensor t({rows, len});
    for (auto& e : t.data()) e = encode(d(rng));
    inputs.push_back(std::move(t));
    total += rows;
  }
  REQUIRE(total == 10000);
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    std::vector<RingTensor> out;
    for (const auto& t : inputs) {
      const ArithShare s = share_input(ctx, PartyId::kP0, ctx.is_p0() ? &t : nullptr, t.shape());
      out.push_back(*reveal(ctx, sec_max(ctx, s), RevealTo::kBoth));
    }
    return out;
  });
  for (std::size_t k = 0; k < inputs.size(); ++k) REQUIRE(a.first[k] == fxp::max(inputs[k]));
}

TEST_CASE("log_softmax") {
  SUBCASE("symmetric pair") {
    const RingTensor x({1, 2});
    const RingTensor y = open_after(x, [](ProtocolCtx& c, const ArithShare& s) {
      return sec_log_softmax(c, s);
    });
    CHECK(std::abs(decode(y[0]) + 0.6931) <= 2e-2);
    CHECK(std::abs(decode(y[1]) + 0.6931) <= 2e-2);
  }
  SUBCASE("argmax preserved and outputs non-positive on 10^4 random pairs") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(-12, 12);
    std::vector<double> v(20000);
    for (auto& e : v) e = d(rng);
    const RingTensor x = RingTensor::encode(v, {10000, 2});
    const RingTensor y = open_after(x, [](ProtocolCtx& c, const ArithShare& s) {
      return sec_log_softmax(c, s);
    });
    for (std::size_t i = 0; i < 10000; ++i) {
      const double a = decode(x[2 * i]), b = decode(x[2 * i + 1]);
      const double ya = decode(y[2 * i]), yb = decode(y[2 * i + 1]);
      REQUIRE(ya <= 0);
      REQUIRE(yb <= 0);
      if (a != b) REQUIRE((a > b) == (ya > yb));
      const double m = std::max(a, b);
      const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
      REQUIRE(std::abs(ya - (a - lse)) <= 5e-2);
    }
  }
}

TEST_CASE("cleartext twins track the secure versions") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-6, 6);
  std::vector<double> v(512);
  for (auto& e : v) e = d(rng);
  const RingTensor x = RingTensor::encode(v, {512});
  const RingTensor s = open_after(x, [](ProtocolCtx& c, const ArithShare& a) {
    return sec_sigmoid(c, a);
  });
  const RingTensor p = fxp::sigmoid(x);
  for (std::size_t i = 0; i < 512; ++i) CHECK(std::abs(decode(s[i]) - decode(p[i])) <= 2e-3);
}

TEST_CASE("approx config") {
  ApproxConfig c;
  CHECK(c.exp_iters == 8);
  CHECK(c.newton_iters_recip == 10);
  CHECK(c.newton_iters_rsqrt == 10);
  c.set("exp_iters=4");
  c.set("newton_iters_recip", "12");
  CHECK(c.exp_iters == 4);
  CHECK(c.newton_iters_recip == 12);
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS(c.set("bogus=1"));
  CHECK_THROWS(c.set("exp_iters"));
  CHECK_THROWS(c.set("exp_iters=x"));
  c.exp_iters = 0;
  CHECK_THROWS(c.validate());
  c.exp_iters = 1;
  CHECK_NOTHROW(c.validate());
  c.newton_iters_rsqrt = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("exp with a single Taylor term still runs") {
  ApproxConfig c;
  c.exp_iters = 1;
  const auto y = secure({0, 0.1}, [&](ProtocolCtx& ctx, const ArithShare& s) {
    return sec_exp(ctx, s, c);
  });
  CHECK(std::abs(y[0] - 1) <= 0.05);
  CHECK(std::abs(y[1] - std::exp(0.1)) <= 0.05);
}

TEST_CASE("round counts depend on configuration only") {
  auto rounds = [](std::vector<double> xs, const ApproxConfig& c) {
    Transcript t;
    secure(xs, [&](ProtocolCtx& ctx, const ArithShare& s) {
      return sec_log_softmax(ctx, sec_sigmoid(ctx, s, c), c);
    }, &t);
    return t.rounds;
  };
  const std::uint64_t r1 = rounds({0.5, -3}, kCfg);
  CHECK(rounds({7, 7}, kCfg) == r1);
  CHECK(rounds({-8, 4}, kCfg) == r1);
  ApproxConfig more = kCfg;
  more.newton_iters_recip = 14;
  CHECK(rounds({0.5, -3}, more) > r1);

  auto exp_rounds = [](double v, int iters) {
    ApproxConfig c;
    c.exp_iters = iters;
    Transcript t;
    secure({v}, [&](ProtocolCtx& ctx, const ArithShare& s) { return sec_exp(ctx, s, c); }, &t);
    return t.rounds;
  };
  CHECK(exp_rounds(-10, 8) == exp_rounds(3, 8));
  CHECK(exp_rounds(1, 8) != exp_rounds(1, 2));
}
