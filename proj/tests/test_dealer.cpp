#include <chrono>
#include <random>
#include <set>

#include "doctest.h"
#include "mpcnn/dealer.hpp"
#include "mpcnn/protocols.hpp"

using namespace mpcnn;
using namespace std::chrono_literals;

namespace {

RingTensor xor_t(const RingTensor& a, const RingTensor& b) { return ring_xor(a, b); }

std::pair<CorrelatedShare, CorrelatedShare> deal_both(Dealer& d, std::uint64_t session,
                                                      std::uint64_t index, const RandRequest& r) {
  const RandRequest one[1] = {r};
  auto a = d.deal(session, PartyId::kP0, index, one);
  auto b = d.deal(session, PartyId::kP1, index, one);
  return {std::move(a[0]), std::move(b[0])};
}

}  // namespace

TEST_CASE("arith triple") {
  Dealer d;
  d.register_session(1);
  const auto [s0, s1] = deal_both(d, 1, 0, RandRequest::arith({4}));
  const RingTensor a = ring_add(s0.a, s1.a), b = ring_add(s0.b, s1.b), c = ring_add(s0.c, s1.c);
  CHECK(c == ring_mul(a, b));
  CHECK(s0.a != s1.a);
  CHECK(d.pending(1) == 0);
}

TEST_CASE("bool triple") {
  Dealer d;
  d.register_session(1);
  const auto [s0, s1] = deal_both(d, 1, 0, RandRequest::boolean({16}));
  CHECK(xor_t(s0.c, s1.c) == ring_and(xor_t(s0.a, s1.a), xor_t(s0.b, s1.b)));
}

TEST_CASE("conv triple for a 1x64 kernel over a 1x384 input") {
  Dealer d;
  d.register_session(1);
  const auto [s0, s1] =
      deal_both(d, 1, 0, RandRequest::conv2d({1, 1, 1, 384}, {32, 1, 1, 64}, {}));
  const RingTensor a = ring_add(s0.a, s1.a), b = ring_add(s0.b, s1.b);
  CHECK(ring_add(s0.c, s1.c) == ring_conv2d(a, b, {}));
  CHECK(s0.c.shape() == Shape{1, 32, 1, 321});
}

TEST_CASE("matmul triple") {
  Dealer d;
  d.register_session(1);
  const auto [s0, s1] = deal_both(d, 1, 0, RandRequest::matmul({1, 32}, {32, 2}));
  CHECK(ring_add(s0.c, s1.c) == ring_matmul(ring_add(s0.a, s1.a), ring_add(s0.b, s1.b)));
}

TEST_CASE("bit pairs: binary and arithmetic views agree, bits look uniform") {
  Dealer d;
  d.register_session(1);
  const std::uint64_t mask = 0x8000000000000003ULL;
  const auto [s0, s1] = deal_both(d, 1, 0, RandRequest::bitpairs({10000}, mask));
  const RingTensor r = xor_t(s0.a, s1.a);
  const RingTensor bits = ring_add(s0.b, s1.b);
  REQUIRE(bits.shape() == Shape{3, 10000});
  const int positions[3] = {0, 1, 63};
  for (int slot = 0; slot < 3; ++slot) {
    std::size_t ones = 0;
    for (std::size_t e = 0; e < 10000; ++e) {
      const RingElem want = (r[e] >> positions[slot]) & 1;
      REQUIRE(bits[slot * 10000 + e] == want);
      ones += want;
    }
    const double freq = static_cast<double>(ones) / 10000;
    CHECK(freq >= 0.48);
    CHECK(freq <= 0.52);
  }
}

TEST_CASE("dealer misuse") {
  Dealer d;
  const RandRequest r[1] = {RandRequest::arith({2})};
  SUBCASE("unknown session") {
    try {
      d.deal(5, PartyId::kP0, 0, r);
      FAIL("expected unknown session");
    } catch (const RandomnessError& e) {
      CHECK(e.kind() == RandomnessError::Kind::kUnknownSession);
    }
  }
  SUBCASE("replayed index") {
    d.register_session(5);
    d.deal(5, PartyId::kP0, 0, r);
    try {
      d.deal(5, PartyId::kP0, 0, r);
      FAIL("expected replay");
    } catch (const RandomnessError& e) {
      CHECK(e.kind() == RandomnessError::Kind::kReplay);
    }
  }
  SUBCASE("parties disagree") {
    d.register_session(5);
    d.deal(5, PartyId::kP0, 0, r);
    const RandRequest other[1] = {RandRequest::arith({3})};
    try {
      d.deal(5, PartyId::kP1, 0, other);
      FAIL("expected mismatch");
    } catch (const RandomnessError& e) {
      CHECK(e.kind() == RandomnessError::Kind::kMismatch);
    }
  }
  SUBCASE("end_session forgets state") {
    d.register_session(5);
    CHECK(d.has_session(5));
    d.end_session(5);
    CHECK_FALSE(d.has_session(5));
    CHECK(d.session_count() == 0);
  }
}

TEST_CASE("regeneration: output depends only on key, session, index and party") {
  const Seed k = random_seed();
  Dealer d1(k), d2(k);
  d1.register_session(3);
  d2.register_session(3);
  const RandRequest r[1] = {RandRequest::arith({8})};
  d1.deal(3, PartyId::kP0, 0, r);
  const auto a = d1.deal(3, PartyId::kP0, 1, r);
  d2.deal(3, PartyId::kP1, 0, r);  // different history at the other party
  d2.deal(3, PartyId::kP0, 0, r);
  const auto b = d2.deal(3, PartyId::kP0, 1, r);
  CHECK(a[0].a == b[0].a);
  CHECK(a[0].c == b[0].c);
}

TEST_CASE("no correlated item is handed out twice") {
  Dealer d;
  InprocDealerClient c0(d, 9, PartyId::kP0);
  std::set<RingElem> seen;
  for (int i = 0; i < 200; ++i) {
    const RandRequest r[1] = {RandRequest::arith({4})};
    const auto s = c0.fetch(r);
    for (RingElem v : s[0].a.data()) CHECK(seen.insert(v).second);
  }
  CHECK(c0.stats().requests == 200);
}

TEST_CASE("pre-dealt source: order, mismatch and exhaustion") {
  Dealer d;
  InprocDealerClient c0(d, 4, PartyId::kP0);
  const std::vector<RandRequest> budget{RandRequest::arith({2}), RandRequest::boolean({3})};
  PreDealtSource src;
  src.load(c0, budget);
  CHECK(src.remaining() == 2);
  CHECK_THROWS_AS(src.take(RandRequest::boolean({3})), RandomnessError);
  src.take(budget[0]);
  src.take(budget[1]);
  try {
    src.take(budget[0]);
    FAIL("expected exhaustion");
  } catch (const RandomnessError& e) {
    CHECK(e.kind() == RandomnessError::Kind::kExhausted);
  }
  CHECK(c0.stats().requests == 1);
}

TEST_CASE("recording source hands out zeros of the right shapes") {
  RecordingSource rec;
  const auto s = rec.take(RandRequest::conv2d({1, 2, 5, 5}, {3, 2, 3, 3}, {1, 1, 1, 1}));
  CHECK(s.c.shape() == Shape{1, 3, 5, 5});
  CHECK(rec.requests().size() == 1);
}

TEST_CASE("TCP dealer serves both parties with matching triples") {
  Dealer d;
  DealerServer server(d, {"127.0.0.1", 0});
  TcpDealerClient c0(tcp_connect(server.endpoint(), 5s), 21, PartyId::kP0);
  TcpDealerClient c1(tcp_connect(server.endpoint(), 5s), 21, PartyId::kP1);
  const RandRequest r[2] = {RandRequest::arith({5}), RandRequest::bitpairs({7}, 0b101)};
  const auto a = c0.fetch(r);
  const auto b = c1.fetch(r);
  CHECK(ring_add(a[0].c, b[0].c) == ring_mul(ring_add(a[0].a, b[0].a), ring_add(a[0].b, b[0].b)));
  CHECK(a[1].b.shape() == Shape{2, 7});
  // Same byte accounting as the in-process client.
  Dealer d2;
  InprocDealerClient i0(d2, 21, PartyId::kP0);
  i0.fetch(r);
  CHECK(i0.stats().bytes_sent == c0.stats().bytes_sent);
  CHECK(i0.stats().bytes_received == c0.stats().bytes_received);
}

TEST_CASE("correlated shapes and sizes") {
  const auto s = correlated_shapes(RandRequest::bitpairs({4, 5}, 0xff));
  CHECK(s.a == Shape{4, 5});
  CHECK(s.b == Shape{8, 4, 5});
  CHECK(correlated_words(RandRequest::arith({10})) == 30);
  CHECK(RandRequest::arith({3}).describe().find("3") != std::string::npos);
}
