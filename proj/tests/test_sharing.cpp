#include <array>
#include <cmath>
#include <random>

#include "doctest.h"
#include "mpcnn/sharing.hpp"
#include "two_party.hpp"

using namespace mpcnn;
using mpcnn::test::run_two_party;

namespace {

RingTensor random_tensor(std::mt19937_64& rng, Shape s) {
  RingTensor t(std::move(s));
  for (auto& v : t.data()) v = rng();
  return t;
}

RingTensor enc(std::vector<double> v) {
  const std::size_t n = v.size();
  return RingTensor::encode(v, {n});
}

// XOR-share a public test value with a mask both parties derive from `seed`.
BinShare bin_input(const ProtocolCtx& ctx, const RingTensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RingTensor mask = random_tensor(rng, x.shape());
  return {ctx.party(), ctx.is_p0() ? ring_xor(x, mask) : mask};
}

}  // namespace

TEST_CASE("PRZS zero shares cancel") {
  auto [a, b] = run_two_party([](ProtocolCtx& ctx) { return ctx.zero_share({1000}); });
  CHECK(ring_add(a.first, b.first) == RingTensor({1000}));
  CHECK(a.first != RingTensor({1000}));
  CHECK(a.second.rounds == 1);  // the setup exchange
}

TEST_CASE("PRG reproducibility and stream independence") {
  const Seed k = random_seed();
  Prg p1(k, 5), p2(k, 5);
  CHECK(p1.tensor({64}) == p2.tensor({64}));
  CHECK(Prg(k, 5).tensor({8}) != Prg(k, 6).tensor({8}));
  CHECK(derive_seed(k, 1) != derive_seed(k, 2));

  // Chi-square over byte values pooled from two sessions' PRZS streams.
  auto [a, b] = run_two_party([](ProtocolCtx& ctx) { return ctx.zero_share({4096}); },
                              test::PartyRun{11});
  auto [c, d] = run_two_party([](ProtocolCtx& ctx) { return ctx.zero_share({4096}); },
                              test::PartyRun{12});
  std::array<double, 256> counts{};
  for (const RingTensor* t : {&a.first, &c.first})
    for (RingElem v : t->data())
      for (int i = 0; i < 8; ++i) counts[(v >> (8 * i)) & 0xff] += 1;
  const double expected = 2 * 4096 * 8 / 256.0;
  double chi = 0;
  for (double o : counts) chi += (o - expected) * (o - expected) / expected;
  CHECK(chi < 340);  // 255 dof, p ~ 3e-4
  CHECK(a.first != c.first);
}

TEST_CASE("share_input and reveal") {
  const RingTensor x = enc({1, 2, 3});
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const ArithShare s = share_input(ctx, PartyId::kP0, ctx.is_p0() ? &x : nullptr, {3});
    const Transcript before = ctx.transcript();
    const auto opened = reveal(ctx, s, RevealTo::kBoth);
    return std::make_tuple(s, *opened, ctx.transcript().rounds - before.rounds,
                           before.bytes());
  });
  const auto& [s0, o0, rounds0, shared_bytes0] = a.first;
  const auto& [s1, o1, rounds1, shared_bytes1] = b.first;
  CHECK(o0 == x);
  CHECK(o1 == x);
  CHECK(ring_add(s0.tensor, s1.tensor) == x);
  CHECK(rounds0 == 1);
  CHECK(rounds1 == 1);
  CHECK(shared_bytes0 == 64);  // only the PRZS setup; sharing itself is free
}

TEST_CASE("sharing a zero tensor gives a fresh zero-sharing") {
  const RingTensor z({16});
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    return share_input(ctx, PartyId::kP0, ctx.is_p0() ? &z : nullptr, {16}).tensor;
  });
  CHECK(a.first != z);
  CHECK(ring_add(a.first, b.first) == z);
}

TEST_CASE("P1 shares CompactCNN-shaped weights") {
  std::mt19937_64 rng(7);
  const RingTensor w = random_tensor(rng, {32, 1, 1, 64});
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const ArithShare s = share_input(ctx, PartyId::kP1, ctx.is_p0() ? nullptr : &w, w.shape());
    return *reveal(ctx, s, RevealTo::kBoth);
  });
  CHECK(a.first == w);
  CHECK(b.first == w);
}

TEST_CASE("share_input checks the holder's shape") {
  const RingTensor x({4});
  CHECK_THROWS(run_two_party([&](ProtocolCtx& ctx) {
    return share_input(ctx, PartyId::kP0, ctx.is_p0() ? &x : nullptr, {5}).tensor;
  }));
}

TEST_CASE("directed reveal is one-way") {
  const RingTensor x = enc({4, 5});
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const ArithShare s = share_input(ctx, PartyId::kP0, ctx.is_p0() ? &x : nullptr, {2});
    const Transcript before = ctx.transcript();
    auto out = reveal(ctx, s, RevealTo::kP0, "OUT");
    const Transcript after = ctx.transcript();
    return std::make_tuple(out, after.rounds - before.rounds, after.tags.count("OUT")
                                                                   ? after.tags.at("OUT")
                                                                   : TagStats{});
  });
  const auto& [out0, r0, tag0] = a.first;
  const auto& [out1, r1, tag1] = b.first;
  REQUIRE(out0.has_value());
  CHECK(*out0 == x);
  CHECK_FALSE(out1.has_value());
  CHECK(tag1.bytes_received == 0);
  CHECK(tag1.bytes_sent == 16);
  CHECK(tag0.bytes_sent == 0);
  CHECK(r0 == 1);
  CHECK(r1 == 1);
}

TEST_CASE("linear operations") {
  const RingTensor two = enc({2}), three = enc({3});
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const ArithShare x = share_input(ctx, PartyId::kP0, ctx.is_p0() ? &two : nullptr, {1});
    const ArithShare y = share_input(ctx, PartyId::kP1, ctx.is_p0() ? nullptr : &three, {1});
    std::vector<RingTensor> out;
    out.push_back(*reveal(ctx, add_shares(x, y), RevealTo::kBoth));
    out.push_back(*reveal(ctx, sub_shares(x, y), RevealTo::kBoth));
    out.push_back(*reveal(ctx, mul_public(x, 0), RevealTo::kBoth));
    out.push_back(*reveal(ctx, add_public(x, encode(1.5)), RevealTo::kBoth));
    out.push_back(*reveal(ctx, mul_public(y, -2), RevealTo::kBoth));
    out.push_back(*reveal(ctx, neg_share(x), RevealTo::kBoth));
    out.push_back(*reveal(ctx, trunc(mul_public(x, enc({0.25})), 16), RevealTo::kBoth));
    return out;
  });
  const auto& o = a.first;
  CHECK(o[0] == enc({5}));
  CHECK(o[1] == enc({-1}));
  CHECK(o[2] == enc({0}));
  CHECK(o[3] == enc({3.5}));  // only P0 adds the constant
  CHECK(o[4] == enc({-6}));
  CHECK(o[5] == enc({-2}));
  CHECK(std::abs(decode(o[6][0]) - 0.5) <= 1.0 / 65536);
}

TEST_CASE("binary share operations") {
  std::mt19937_64 rng(8);
  const RingTensor x = random_tensor(rng, {64});
  const RingTensor one({1}, RingElem{1});
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const BinShare s = bin_input(ctx, x, 99);
    const BinShare o = bin_input(ctx, one, 98);
    std::vector<RingTensor> out;
    out.push_back(*reveal_bin(ctx, bin_xor(s, s), RevealTo::kBoth));
    out.push_back(*reveal_bin(ctx, bin_shift_left(o, 3), RevealTo::kBoth));
    out.push_back(*reveal_bin(ctx, bin_shift_right(s, 63), RevealTo::kBoth));
    out.push_back(*reveal_bin(ctx, bin_xor_public(s, 0xff), RevealTo::kBoth));
    out.push_back(*reveal_bin(ctx, bin_and_public(s, 0xf0f0), RevealTo::kBoth));
    out.push_back(*reveal_bin(ctx, bin_shift_right_arith(s, 60), RevealTo::kBoth));
    return out;
  });
  const auto& o = a.first;
  CHECK(o[0] == RingTensor({64}));
  CHECK(o[1][0] == 8);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(o[2][i] == msb(x[i]));
    CHECK(o[3][i] == (x[i] ^ 0xff));
    CHECK(o[4][i] == (x[i] & 0xf0f0));
    CHECK(o[5][i] == static_cast<RingElem>(as_signed(x[i]) >> 60));
  }
}

TEST_CASE("reconstruction property: random shapes and ops") {
  // 10^4 cases, batched 100 per two-party run.
  std::mt19937_64 rng(9);
  std::size_t cases = 0;
  for (int run = 0; run < 100; ++run) {
    std::vector<RingTensor> xs, ys;
    std::vector<std::int64_t> ks;
    for (int i = 0; i < 100; ++i) {
      Shape s(1 + rng() % 3);
      for (auto& d : s) d = 1 + rng() % 5;
      xs.push_back(random_tensor(rng, s));
      ys.push_back(random_tensor(rng, s));
      ks.push_back(static_cast<std::int64_t>(rng()));
    }
    auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
      std::vector<RingTensor> out;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const ArithShare x =
            share_input(ctx, PartyId::kP0, ctx.is_p0() ? &xs[i] : nullptr, xs[i].shape());
        const ArithShare y =
            share_input(ctx, PartyId::kP1, ctx.is_p0() ? nullptr : &ys[i], ys[i].shape());
        const ArithShare r =
            add_public(mul_public(sub_shares(add_shares(x, y), neg_share(y)), ks[i]), ys[i]);
        out.push_back(r.tensor);
      }
      return out;
    });
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const RingTensor want = ring_add(
          ring_scale(ring_add(ring_add(xs[i], ys[i]), ys[i]), ks[i]), ys[i]);
      REQUIRE(ring_add(a.first[i], b.first[i]) == want);
      ++cases;
    }
  }
  CHECK(cases == 10000);
}
