#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "mpcnn/protocol_ctx.hpp"
#include "mpcnn/ring.hpp"

namespace mpcnn {

// One party's additive share (mod 2^64).
struct ArithShare {
  PartyId owner = PartyId::kP0;
  RingTensor tensor;

  const Shape& shape() const { return tensor.shape(); }
  std::size_t size() const { return tensor.size(); }
};

// One party's XOR share, 64 secret bits per word.
struct BinShare {
  PartyId owner = PartyId::kP0;
  RingTensor tensor;

  const Shape& shape() const { return tensor.shape(); }
  std::size_t size() const { return tensor.size(); }
};

enum class RevealTo { kP0, kP1, kBoth };

// The holder passes the value; the other party passes nullptr. Shapes must
// agree. No communication: the holder adds x to a PRZS zero share.
ArithShare share_input(ProtocolCtx& ctx, PartyId holder, const RingTensor* value,
                       const Shape& shape);

// A public tensor as a trivial sharing (P0 holds it, P1 holds zeros).
ArithShare public_share(PartyId owner, const RingTensor& value);

// nullopt at a party that is not a recipient.
std::optional<RingTensor> reveal(ProtocolCtx& ctx, const ArithShare& x, RevealTo to,
                                 std::string_view tag = "REVEAL");
std::optional<RingTensor> reveal_bin(ProtocolCtx& ctx, const BinShare& x, RevealTo to,
                                     std::string_view tag = "REVEAL_BIN");

ArithShare add_shares(const ArithShare& a, const ArithShare& b);
ArithShare sub_shares(const ArithShare& a, const ArithShare& b);
ArithShare neg_share(const ArithShare& a);
ArithShare add_public(const ArithShare& a, const RingTensor& p);
ArithShare add_public(const ArithShare& a, RingElem c);
ArithShare mul_public(const ArithShare& a, std::int64_t k);
// Elementwise raw product with a public tensor; no truncation.
ArithShare mul_public(const ArithShare& a, const RingTensor& p);
// Local truncation: P0 shifts its share, P1 shifts the negation of its share.
ArithShare trunc(const ArithShare& a, int bits);

BinShare bin_xor(const BinShare& a, const BinShare& b);
BinShare bin_xor_public(const BinShare& a, RingElem mask);
BinShare bin_and_public(const BinShare& a, RingElem mask);
BinShare bin_shift_left(const BinShare& a, int k);
BinShare bin_shift_right(const BinShare& a, int k);        // logical
BinShare bin_shift_right_arith(const BinShare& a, int k);  // sign extending

}  // namespace mpcnn
