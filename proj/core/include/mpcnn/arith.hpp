#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mpcnn/sharing.hpp"

namespace mpcnn {

using ArithPair = std::pair<const ArithShare*, const ArithShare*>;
using BinPair = std::pair<const BinShare*, const BinShare*>;

// Raw ring product (no truncation). One opening round.
ArithShare beaver_mul(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& y);
// Any number of independent products in a single round.
std::vector<ArithShare> beaver_mul_many(ProtocolCtx& ctx, std::span<const ArithPair> pairs);
ArithShare mul_trunc(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& y);

// [M x K] * [K x N], raw.
ArithShare matmul(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w);
// Raw convolution; the triple carries the exact geometry.
ArithShare conv2d_raw(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w,
                      const ConvGeometry& g);
// Fixed-point convolution: raw conv, truncation, then per-channel bias.
ArithShare conv2d(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w,
                  const ArithShare* bias, const ConvGeometry& g);

BinShare and_gate(ProtocolCtx& ctx, const BinShare& x, const BinShare& y);
std::vector<BinShare> and_many(ProtocolCtx& ctx, std::span<const BinPair> pairs);

// Parallel-prefix adder over the two parties' shares. Six AND rounds.
BinShare a2b(ProtocolCtx& ctx, const ArithShare& x);
ArithShare b2a(ProtocolCtx& ctx, const BinShare& x);
// Arithmetic shares (values 0/1, unscaled) of the bit positions in `mask`,
// in ascending bit order. One round.
std::vector<ArithShare> b2a_bits(ProtocolCtx& ctx, const BinShare& x, std::uint64_t mask);

// 1 where decode(x) > 0, else 0 (unscaled).
ArithShare gtz(ProtocolCtx& ctx, const ArithShare& x);
// cond must hold 0/1 values. y + cond*(x - y).
ArithShare mux(ProtocolCtx& ctx, const ArithShare& cond, const ArithShare& x,
               const ArithShare& y);
ArithShare relu(ProtocolCtx& ctx, const ArithShare& x);

struct PoolGeometry {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t pad = 0;
};
Shape pool_output_shape(const Shape& x, const PoolGeometry& g);
// Window index table: for each output element, kernel^2 flat input indices.
// Border windows repeat an in-window element instead of a padding value.
std::vector<std::size_t> pool_window_index(const Shape& x, const PoolGeometry& g);
ArithShare maxpool2d(ProtocolCtx& ctx, const ArithShare& x, const PoolGeometry& g);
// Max along the last axis; result drops that axis.
ArithShare max_last_axis(ProtocolCtx& ctx, const ArithShare& x);

// floor(decode(x) / d) re-encoded, d a public power of two. Exact.
ArithShare const_floor(ProtocolCtx& ctx, const ArithShare& x, std::uint64_t d);

// One-hot (0/1 shares) of the position of the leading one of x among bits
// [lo, hi]; the result has hi - lo + 1 entries, entry i for bit lo + i.
std::vector<ArithShare> leading_one_hot(ProtocolCtx& ctx, const ArithShare& x, int lo, int hi);

ArithShare concat_shares(std::span<const ArithShare> parts, std::size_t axis);
std::vector<ArithShare> split_share(const ArithShare& x, std::span<const std::size_t> sizes,
                                    std::size_t axis);
ArithShare upsample_share(const ArithShare& x);

}  // namespace mpcnn
