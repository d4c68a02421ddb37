#include "mpcnn/arith.hpp"

#include <bit>

#include "kernels.hpp"
#include "ops.hpp"

namespace mpcnn {

namespace {

RingTensor flatten_into(std::span<const RingTensor* const> parts, std::size_t total) {
  RingTensor out(Shape{total});
  std::size_t off = 0;
  for (const RingTensor* p : parts) {
    std::copy_n(p->ptr(), p->size(), out.ptr() + off);
    off += p->size();
  }
  return out;
}

RingTensor slice_flat(const RingTensor& t, std::size_t off, const Shape& shape) {
  RingTensor out(shape);
  std::copy_n(t.ptr() + off, out.size(), out.ptr());
  return out;
}

}  // namespace

std::vector<ArithShare> beaver_mul_many(ProtocolCtx& ctx, std::span<const ArithPair> pairs) {
  std::vector<ArithShare> out;
  if (pairs.empty()) return out;
  std::size_t total = 0;
  std::vector<const RingTensor*> xs, ys;
  for (const auto& [x, y] : pairs) {
    require_same_shape(x->tensor, y->tensor, "beaver_mul");
    total += x->size();
    xs.push_back(&x->tensor);
    ys.push_back(&y->tensor);
  }
  const CorrelatedShare t = ctx.take(RandRequest::arith({total}));
  const RingTensor x = flatten_into(xs, total);
  const RingTensor y = flatten_into(ys, total);
  const RingTensor mine[2] = {ring_sub(x, t.a), ring_sub(y, t.b)};
  const auto theirs = ctx.exchange("BEAVER", mine);
  const RingTensor e = ring_add(mine[0], theirs[0]);
  const RingTensor d = ring_add(mine[1], theirs[1]);
  RingTensor z(Shape{total});
  const bool p0 = ctx.is_p0();
  for (std::size_t i = 0; i < total; ++i) {
    RingElem v = t.c[i] + e[i] * t.b[i] + t.a[i] * d[i];
    if (p0) v += e[i] * d[i];
    z[i] = v;
  }
  std::size_t off = 0;
  for (const auto& [xp, yp] : pairs) {
    out.push_back({ctx.party(), slice_flat(z, off, xp->shape())});
    off += xp->size();
  }
  return out;
}

ArithShare beaver_mul(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& y) {
  const ArithPair p[1] = {{&x, &y}};
  return std::move(beaver_mul_many(ctx, p).front());
}

ArithShare mul_trunc(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& y) {
  return trunc(beaver_mul(ctx, x, y), ctx.frac_bits());
}

ArithShare matmul(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w) {
  const CorrelatedShare t = ctx.take(RandRequest::matmul(x.shape(), w.shape()));
  const RingTensor mine[2] = {ring_sub(x.tensor, t.a), ring_sub(w.tensor, t.b)};
  const auto theirs = ctx.exchange("MATMUL", mine);
  const RingTensor e = ring_add(mine[0], theirs[0]);
  const RingTensor d = ring_add(mine[1], theirs[1]);
  // z = c + e*b + a*d (+ e*d at P0); e*(b + d) folds the last two at P0
  const RingTensor& bb = t.b;
  RingTensor z = ring_add(t.c, ring_matmul(t.a, d));
  z = ring_add(z, ring_matmul(e, ctx.is_p0() ? ring_add(bb, d) : bb));
  return {ctx.party(), std::move(z)};
}

ArithShare conv2d_raw(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w,
                      const ConvGeometry& g) {
  const CorrelatedShare t = ctx.take(RandRequest::conv2d(x.shape(), w.shape(), g));
  const RingTensor mine[2] = {ring_sub(x.tensor, t.a), ring_sub(w.tensor, t.b)};
  const auto theirs = ctx.exchange("CONV", mine);
  const RingTensor e = ring_add(mine[0], theirs[0]);
  const RingTensor d = ring_add(mine[1], theirs[1]);
  RingTensor z = ring_add(t.c, ring_conv2d(t.a, d, g));
  z = ring_add(z, ring_conv2d(e, ctx.is_p0() ? ring_add(t.b, d) : t.b, g));
  return {ctx.party(), std::move(z)};
}

ArithShare conv2d(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w,
                  const ArithShare* bias, const ConvGeometry& g) {
  ArithShare y = trunc(conv2d_raw(ctx, x, w, g), ctx.frac_bits());
  if (bias) y = add_shares(y, {bias->owner, expand_channels(bias->tensor, y.shape())});
  return y;
}

std::vector<BinShare> and_many(ProtocolCtx& ctx, std::span<const BinPair> pairs) {
  std::vector<BinShare> out;
  if (pairs.empty()) return out;
  std::size_t total = 0;
  std::vector<const RingTensor*> xs, ys;
  for (const auto& [x, y] : pairs) {
    require_same_shape(x->tensor, y->tensor, "and_gate");
    total += x->size();
    xs.push_back(&x->tensor);
    ys.push_back(&y->tensor);
  }
  const CorrelatedShare t = ctx.take(RandRequest::boolean({total}));
  const RingTensor x = flatten_into(xs, total);
  const RingTensor y = flatten_into(ys, total);
  const RingTensor mine[2] = {ring_xor(x, t.a), ring_xor(y, t.b)};
  const auto theirs = ctx.exchange("AND", mine);
  const bool p0 = ctx.is_p0();
  RingTensor z(Shape{total});
  for (std::size_t i = 0; i < total; ++i) {
    const RingElem e = mine[0][i] ^ theirs[0][i];
    const RingElem f = mine[1][i] ^ theirs[1][i];
    RingElem v = t.c[i] ^ (f & t.a[i]) ^ (e & t.b[i]);
    if (p0) v ^= e & f;
    z[i] = v;
  }
  std::size_t off = 0;
  for (const auto& [xp, yp] : pairs) {
    out.push_back({ctx.party(), slice_flat(z, off, xp->shape())});
    off += xp->size();
  }
  return out;
}

BinShare and_gate(ProtocolCtx& ctx, const BinShare& x, const BinShare& y) {
  const BinPair p[1] = {{&x, &y}};
  return std::move(and_many(ctx, p).front());
}

BinShare a2b(ProtocolCtx& ctx, const ArithShare& x) {
  const PartyId me = ctx.party();
  const bool p0 = ctx.is_p0();
  const Shape& shape = x.shape();
  // Summands a (P0's share) and b (P1's share) as XOR sharings.
  const BinShare zero{me, RingTensor(shape)};
  const BinShare own{me, x.tensor};
  const BinShare& a = p0 ? own : zero;
  const BinShare& b = p0 ? zero : own;
  const BinShare a1 = bin_shift_left(a, 1);
  const BinShare b1 = bin_shift_left(b, 1);
  // Products of two bits held by the same party are local.
  const BinShare aa1{me, ring_and(a.tensor, a1.tensor)};
  const BinShare bb1{me, ring_and(b.tensor, b1.tensor)};

  // First level covers two-bit blocks directly:
  //   G = a&b ^ (a&a1)&b1 ^ a1&(b&b1)
  //   P = a&a1 ^ b&b1 ^ a&b1 ^ a1&b
  const BinPair first[5] = {{&a, &b}, {&aa1, &b1}, {&a1, &bb1}, {&a, &b1}, {&a1, &b}};
  auto r = and_many(ctx, first);
  BinShare g = bin_xor(bin_xor(r[0], r[1]), r[2]);
  BinShare p = bin_xor(bin_xor(aa1, bb1), bin_xor(r[3], r[4]));

  for (int s = 2; s < 64; s *= 2) {
    const BinShare gs = bin_shift_left(g, s);
    if (s < 32) {
      const BinShare ps = bin_shift_left(p, s);
      const BinPair lvl[2] = {{&p, &gs}, {&p, &ps}};
      auto q = and_many(ctx, lvl);
      g = bin_xor(g, q[0]);
      p = std::move(q[1]);
    } else {
      g = bin_xor(g, and_gate(ctx, p, gs));
    }
  }
  // Each party's share of a ^ b is its own arithmetic share word.
  return bin_xor(own, bin_shift_left(g, 1));
}

std::vector<ArithShare> b2a_bits(ProtocolCtx& ctx, const BinShare& x, std::uint64_t mask) {
  std::vector<ArithShare> out;
  if (mask == 0) return out;
  const CorrelatedShare r = ctx.take(RandRequest::bitpairs(x.shape(), mask));
  const RingTensor mine = ring_xor(x.tensor, r.a);
  const RingTensor z = ring_xor(mine, ctx.exchange("B2A", mine));
  const std::size_t n = x.size();
  const bool p0 = ctx.is_p0();
  std::size_t slot = 0;
  for (int bit = 0; bit < 64; ++bit) {
    if (!((mask >> bit) & 1)) continue;
    RingTensor v(x.shape());
    const RingElem* ra = r.b.ptr() + slot * n;
    for (std::size_t e = 0; e < n; ++e) {
      const RingElem zb = (z[e] >> bit) & 1;
      RingElem s = ra[e] - 2 * zb * ra[e];
      if (p0) s += zb;
      v[e] = s;
    }
    out.push_back({ctx.party(), std::move(v)});
    ++slot;
  }
  return out;
}

ArithShare b2a(ProtocolCtx& ctx, const BinShare& x) {
  const auto bits = b2a_bits(ctx, x, ~std::uint64_t{0});
  RingTensor acc(x.shape());
  for (int j = 0; j < 64; ++j) {
    const RingTensor& b = bits[j].tensor;
    for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += b[e] << j;
  }
  return {ctx.party(), std::move(acc)};
}

ArithShare gtz(ProtocolCtx& ctx, const ArithShare& x) {
  const BinShare nb = a2b(ctx, neg_share(x));
  return std::move(b2a_bits(ctx, nb, std::uint64_t{1} << 63).front());
}

ArithShare mux(ProtocolCtx& ctx, const ArithShare& cond, const ArithShare& x,
               const ArithShare& y) {
  detail::SecureOps ops{ctx};
  return detail::mux(ops, cond, x, y);
}

ArithShare relu(ProtocolCtx& ctx, const ArithShare& x) {
  detail::SecureOps ops{ctx};
  return detail::relu(ops, x);
}

Shape pool_output_shape(const Shape& x, const PoolGeometry& g) {
  if (x.size() != 4) throw ShapeError("maxpool expects N x C x H x W, got " + shape_str(x));
  if (g.kernel == 0 || g.stride == 0) throw ShapeError("maxpool: kernel and stride must be positive");
  if (g.pad >= g.kernel) throw ShapeError("maxpool: padding must be smaller than the kernel");
  const std::size_t hp = x[2] + 2 * g.pad, wp = x[3] + 2 * g.pad;
  if (hp < g.kernel || wp < g.kernel) throw ShapeError("maxpool: window larger than input");
  return {x[0], x[1], (hp - g.kernel) / g.stride + 1, (wp - g.kernel) / g.stride + 1};
}

std::vector<std::size_t> pool_window_index(const Shape& x, const PoolGeometry& g) {
  const Shape os = pool_output_shape(x, g);
  const std::size_t planes = os[0] * os[1], OH = os[2], OW = os[3], H = x[2], W = x[3];
  const std::size_t K = g.kernel * g.kernel;
  std::vector<std::size_t> idx;
  idx.reserve(planes * OH * OW * K);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t oh = 0; oh < OH; ++oh) {
      for (std::size_t ow = 0; ow < OW; ++ow) {
        const std::size_t start = idx.size();
        std::size_t first = SIZE_MAX;
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
          for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.pad);
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(H) ||
                iw >= static_cast<std::ptrdiff_t>(W)) {
              idx.push_back(SIZE_MAX);
              continue;
            }
            const std::size_t flat = (pl * H + static_cast<std::size_t>(ih)) * W +
                                     static_cast<std::size_t>(iw);
            if (first == SIZE_MAX) first = flat;
            idx.push_back(flat);
          }
        }
        for (std::size_t i = start; i < start + K; ++i)
          if (idx[i] == SIZE_MAX) idx[i] = first;
      }
    }
  }
  return idx;
}

ArithShare maxpool2d(ProtocolCtx& ctx, const ArithShare& x, const PoolGeometry& g) {
  detail::SecureOps ops{ctx};
  return detail::maxpool2d(ops, x, g);
}

ArithShare max_last_axis(ProtocolCtx& ctx, const ArithShare& x) {
  detail::SecureOps ops{ctx};
  return detail::max_last_axis(ops, x);
}

ArithShare const_floor(ProtocolCtx& ctx, const ArithShare& x, std::uint64_t d) {
  if (d == 0 || !std::has_single_bit(d))
    throw std::invalid_argument("const_floor divisor must be a power of two");
  const int k = std::countr_zero(d);
  const int f = ctx.frac_bits();
  if (k + f >= 64) throw std::invalid_argument("const_floor divisor too large");
  BinShare b = a2b(ctx, x);
  b = bin_shift_left(bin_shift_right_arith(b, k + f), f);
  return b2a(ctx, b);
}

std::vector<ArithShare> leading_one_hot(ProtocolCtx& ctx, const ArithShare& x, int lo, int hi) {
  detail::SecureOps ops{ctx};
  return ops.leading_one_hot(x, lo, hi);
}

ArithShare concat_shares(std::span<const ArithShare> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero shares");
  std::vector<RingTensor> ts;
  ts.reserve(parts.size());
  for (const auto& p : parts) ts.push_back(p.tensor);
  return {parts[0].owner, concat(ts, axis)};
}

std::vector<ArithShare> split_share(const ArithShare& x, std::span<const std::size_t> sizes,
                                    std::size_t axis) {
  std::vector<ArithShare> out;
  for (auto& t : split(x.tensor, sizes, axis)) out.push_back({x.owner, std::move(t)});
  return out;
}

ArithShare upsample_share(const ArithShare& x) { return {x.owner, upsample_nearest2x(x.tensor)}; }

}  // namespace mpcnn
