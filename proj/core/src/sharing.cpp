#include "mpcnn/sharing.hpp"

namespace mpcnn {

namespace {

void check_shift(int k) {
  if (k < 0 || k >= 64) throw std::invalid_argument("shift out of range: " + std::to_string(k));
}

template <class F>
RingTensor map_words(const RingTensor& t, F f) {
  RingTensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
  return out;
}

}  // namespace

ArithShare share_input(ProtocolCtx& ctx, PartyId holder, const RingTensor* value,
                       const Shape& shape) {
  RingTensor z = ctx.zero_share(shape);
  if (ctx.party() == holder) {
    if (!value) throw std::invalid_argument("share_input: holder must supply the value");
    if (value->shape() != shape)
      throw ShapeError("share_input: value shape " + shape_str(value->shape()) +
                       " != declared " + shape_str(shape));
    z = ring_add(z, *value);
  }
  return {ctx.party(), std::move(z)};
}

ArithShare public_share(PartyId owner, const RingTensor& value) {
  if (owner == PartyId::kP0) return {owner, value};
  return {owner, RingTensor(value.shape())};
}

std::optional<RingTensor> reveal(ProtocolCtx& ctx, const ArithShare& x, RevealTo to,
                                 std::string_view tag) {
  if (to == RevealTo::kBoth) return ring_add(x.tensor, ctx.exchange(tag, x.tensor));
  const PartyId target = to == RevealTo::kP0 ? PartyId::kP0 : PartyId::kP1;
  if (ctx.party() == target) return ring_add(x.tensor, ctx.recv(tag, x.shape()));
  ctx.send(tag, x.tensor);
  return std::nullopt;
}

std::optional<RingTensor> reveal_bin(ProtocolCtx& ctx, const BinShare& x, RevealTo to,
                                     std::string_view tag) {
  if (to == RevealTo::kBoth) return ring_xor(x.tensor, ctx.exchange(tag, x.tensor));
  const PartyId target = to == RevealTo::kP0 ? PartyId::kP0 : PartyId::kP1;
  if (ctx.party() == target) return ring_xor(x.tensor, ctx.recv(tag, x.shape()));
  ctx.send(tag, x.tensor);
  return std::nullopt;
}

ArithShare add_shares(const ArithShare& a, const ArithShare& b) {
  return {a.owner, ring_add(a.tensor, b.tensor)};
}
ArithShare sub_shares(const ArithShare& a, const ArithShare& b) {
  return {a.owner, ring_sub(a.tensor, b.tensor)};
}
ArithShare neg_share(const ArithShare& a) { return {a.owner, ring_neg(a.tensor)}; }

ArithShare add_public(const ArithShare& a, const RingTensor& p) {
  require_same_shape(a.tensor, p, "add_public");
  if (a.owner != PartyId::kP0) return a;
  return {a.owner, ring_add(a.tensor, p)};
}

ArithShare add_public(const ArithShare& a, RingElem c) {
  if (a.owner != PartyId::kP0) return a;
  return {a.owner, ring_add_scalar(a.tensor, c)};
}

ArithShare mul_public(const ArithShare& a, std::int64_t k) { return {a.owner, ring_scale(a.tensor, k)}; }

ArithShare mul_public(const ArithShare& a, const RingTensor& p) {
  return {a.owner, ring_mul(a.tensor, p)};
}

ArithShare trunc(const ArithShare& a, int bits) {
  if (bits <= 0) return a;
  if (a.owner == PartyId::kP0) return {a.owner, ring_trunc(a.tensor, bits)};
  return {a.owner, ring_neg(ring_trunc(ring_neg(a.tensor), bits))};
}

BinShare bin_xor(const BinShare& a, const BinShare& b) {
  return {a.owner, ring_xor(a.tensor, b.tensor)};
}

BinShare bin_xor_public(const BinShare& a, RingElem mask) {
  if (a.owner != PartyId::kP0) return a;
  return {a.owner, map_words(a.tensor, [mask](RingElem v) { return v ^ mask; })};
}

BinShare bin_and_public(const BinShare& a, RingElem mask) {
  return {a.owner, map_words(a.tensor, [mask](RingElem v) { return v & mask; })};
}

BinShare bin_shift_left(const BinShare& a, int k) {
  check_shift(k);
  return {a.owner, map_words(a.tensor, [k](RingElem v) { return v << k; })};
}

BinShare bin_shift_right(const BinShare& a, int k) {
  check_shift(k);
  return {a.owner, map_words(a.tensor, [k](RingElem v) { return v >> k; })};
}

// Per-share arithmetic shift is correct on XOR shares: the sign fill of each
// share XORs to the sign fill of the secret.
BinShare bin_shift_right_arith(const BinShare& a, int k) {
  check_shift(k);
  return {a.owner,
          map_words(a.tensor, [k](RingElem v) { return static_cast<RingElem>(as_signed(v) >> k); })};
}

}  // namespace mpcnn
