#pragma once

// Two interchangeable backends for the composite algorithms in kernels.hpp.
// PlainOps works on cleartext ring tensors and is the fixed-point oracle;
// SecureOps works on one party's shares. Both expose the same primitives, so
// the oracle runs exactly the formulas the protocol runs.

#include <bit>
#include <span>
#include <utility>
#include <vector>

#include "mpcnn/arith.hpp"
#include "mpcnn/ring.hpp"
#include "mpcnn/sharing.hpp"

namespace mpcnn::detail {

inline std::uint64_t bit_range_mask(int lo, int hi) {
  std::uint64_t m = 0;
  for (int b = lo; b <= hi; ++b) m |= std::uint64_t{1} << b;
  return m;
}

// Prefix-OR from the top within a window of `span` bits, then isolate the
// leading one. Shared by both backends so their results agree bit for bit.
inline int prefix_or_levels(int span) {
  int levels = 0;
  for (int s = 1; s < span; s *= 2) ++levels;
  return levels;
}

struct PlainOps {
  using Value = RingTensor;
  FixedPointConfig fp{};

  int frac_bits() const { return fp.frac_bits; }
  static const RingTensor& t(const Value& v) { return v; }
  Value wrap(const Value&, RingTensor x) const { return x; }
  Value from_public(RingTensor p) const { return p; }

  Value add(const Value& a, const Value& b) const { return ring_add(a, b); }
  Value sub(const Value& a, const Value& b) const { return ring_sub(a, b); }
  Value neg(const Value& a) const { return ring_neg(a); }
  Value add_public(const Value& a, const RingTensor& p) const { return ring_add(a, p); }
  Value add_const(const Value& a, RingElem c) const { return ring_add_scalar(a, c); }
  Value scale(const Value& a, std::int64_t k) const { return ring_scale(a, k); }
  Value scale_public(const Value& a, const RingTensor& p) const { return ring_mul(a, p); }
  Value trunc(const Value& a, int bits) const { return bits > 0 ? ring_trunc(a, bits) : a; }

  std::vector<Value> mul_many(std::span<const std::pair<const Value*, const Value*>> ps) const {
    std::vector<Value> out;
    out.reserve(ps.size());
    for (const auto& [a, b] : ps) out.push_back(ring_mul(*a, *b));
    return out;
  }
  Value mul(const Value& a, const Value& b) const { return ring_mul(a, b); }
  Value matmul(const Value& a, const Value& b) const { return ring_matmul(a, b); }
  Value conv2d(const Value& x, const Value& w, const ConvGeometry& g) const {
    return ring_conv2d(x, w, g);
  }

  Value gtz(const Value& a) const {
    RingTensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = msb(RingElem{0} - a[i]);
    return out;
  }

  std::vector<Value> bits(const Value& a, std::uint64_t mask) const {
    std::vector<Value> out;
    for (int b = 0; b < 64; ++b) {
      if (!((mask >> b) & 1)) continue;
      RingTensor v(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) v[i] = (a[i] >> b) & 1;
      out.push_back(std::move(v));
    }
    return out;
  }

  std::vector<Value> leading_one_hot(const Value& a, int lo, int hi) const {
    const int levels = prefix_or_levels(hi - lo + 1);
    RingTensor h(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
      RingElem o = a[i];
      for (int l = 0, s = 1; l < levels; ++l, s *= 2) o |= o >> s;
      h[i] = o ^ (o >> 1);
    }
    return bits(h, bit_range_mask(lo, hi));
  }
};

struct SecureOps {
  using Value = ArithShare;
  ProtocolCtx& ctx;

  int frac_bits() const { return ctx.frac_bits(); }
  static const RingTensor& t(const Value& v) { return v.tensor; }
  Value wrap(const Value& like, RingTensor x) const { return {like.owner, std::move(x)}; }
  Value from_public(RingTensor p) const { return public_share(ctx.party(), p); }

  Value add(const Value& a, const Value& b) const { return add_shares(a, b); }
  Value sub(const Value& a, const Value& b) const { return sub_shares(a, b); }
  Value neg(const Value& a) const { return neg_share(a); }
  Value add_public(const Value& a, const RingTensor& p) const { return mpcnn::add_public(a, p); }
  Value add_const(const Value& a, RingElem c) const { return mpcnn::add_public(a, c); }
  Value scale(const Value& a, std::int64_t k) const { return mul_public(a, k); }
  Value scale_public(const Value& a, const RingTensor& p) const { return mul_public(a, p); }
  Value trunc(const Value& a, int bits) const { return mpcnn::trunc(a, bits); }

  std::vector<Value> mul_many(std::span<const std::pair<const Value*, const Value*>> ps) const {
    return beaver_mul_many(ctx, ps);
  }
  Value mul(const Value& a, const Value& b) const { return beaver_mul(ctx, a, b); }
  Value matmul(const Value& a, const Value& b) const { return mpcnn::matmul(ctx, a, b); }
  Value conv2d(const Value& x, const Value& w, const ConvGeometry& g) const {
    return conv2d_raw(ctx, x, w, g);
  }

  Value gtz(const Value& a) const { return mpcnn::gtz(ctx, a); }

  std::vector<Value> bits(const Value& a, std::uint64_t mask) const {
    return b2a_bits(ctx, a2b(ctx, a), mask);
  }

  std::vector<Value> leading_one_hot(const Value& a, int lo, int hi) const {
    const int levels = prefix_or_levels(hi - lo + 1);
    BinShare o = a2b(ctx, a);
    for (int l = 0, s = 1; l < levels; ++l, s *= 2) {
      const BinShare sh = bin_shift_right(o, s);
      // o | sh == o ^ sh ^ (o & sh)
      o = bin_xor(bin_xor(o, sh), and_gate(ctx, o, sh));
    }
    const BinShare h = bin_xor(o, bin_shift_right(o, 1));
    return b2a_bits(ctx, h, bit_range_mask(lo, hi));
  }
};

}  // namespace mpcnn::detail
