#pragma once

// Composite algorithms written once against the Ops interface of ops.hpp.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mpcnn/approx.hpp"
#include "mpcnn/arith.hpp"
#include "mpcnn/errors.hpp"
#include "ops.hpp"

namespace mpcnn::detail {

template <class Ops>
using ValueOf = typename Ops::Value;

template <class Ops>
using PairList = std::vector<std::pair<const ValueOf<Ops>*, const ValueOf<Ops>*>>;

inline RingElem enc_at(double v, int frac_bits) {
  return encode(v, FixedPointConfig(frac_bits));
}

inline int floor_log2(double v) { return static_cast<int>(std::floor(std::log2(v))); }

// Bit window [lo, hi] of the leading one for inputs inside d.
inline std::pair<int, int> domain_bits(const Domain& d, int f, const char* what) {
  if (!(d.lo > 0) || !(d.hi >= d.lo))
    throw std::invalid_argument(std::string(what) + ": domain must satisfy 0 < lo <= hi");
  const int lo = f + floor_log2(d.lo);
  const int hi = f + floor_log2(d.hi);
  if (lo < 0 || hi > 62)
    throw std::invalid_argument(std::string(what) + ": domain not representable at " +
                                std::to_string(f) + " fractional bits");
  return {lo, hi};
}

template <class Ops>
ValueOf<Ops> sum_values(const Ops& ops, const std::vector<ValueOf<Ops>>& vs) {
  ValueOf<Ops> acc = vs.at(0);
  for (std::size_t i = 1; i < vs.size(); ++i) acc = ops.add(acc, vs[i]);
  return acc;
}

// Sum_i w_i * v_i with public integer weights. Local.
template <class Ops>
ValueOf<Ops> weighted_sum(const Ops& ops, const std::vector<ValueOf<Ops>>& vs,
                          const std::vector<std::int64_t>& w) {
  ValueOf<Ops> acc = ops.scale(vs.at(0), w.at(0));
  for (std::size_t i = 1; i < vs.size(); ++i) acc = ops.add(acc, ops.scale(vs[i], w[i]));
  return acc;
}

template <class Ops>
ValueOf<Ops> mux(const Ops& ops, const ValueOf<Ops>& cond, const ValueOf<Ops>& x,
                 const ValueOf<Ops>& y) {
  return ops.add(y, ops.mul(cond, ops.sub(x, y)));
}

template <class Ops>
ValueOf<Ops> relu(const Ops& ops, const ValueOf<Ops>& x) {
  return ops.mul(x, ops.gtz(x));
}

template <class Ops>
ValueOf<Ops> max_last_axis(const Ops& ops, const ValueOf<Ops>& x) {
  using V = ValueOf<Ops>;
  const Shape& sh = Ops::t(x).shape();
  if (sh.empty() || sh.back() == 0) throw ShapeError("max over an empty axis");
  Shape out_shape(sh.begin(), sh.end() - 1);
  V cur = x;
  std::size_t len = sh.back();
  while (len > 1) {
    const std::size_t half = len / 2;
    const V a = ops.wrap(x, slice_last(Ops::t(cur), 0, 2, half));
    const V b = ops.wrap(x, slice_last(Ops::t(cur), 1, 2, half));
    const V d = ops.sub(a, b);
    V m = ops.add(b, ops.mul(ops.gtz(d), d));
    if (len % 2) {
      const RingTensor parts[] = {Ops::t(m), slice_last(Ops::t(cur), len - 1, 1, 1)};
      m = ops.wrap(x, concat(parts, Ops::t(m).rank() - 1));
    }
    cur = std::move(m);
    len = half + len % 2;
  }
  return ops.wrap(x, Ops::t(cur).reshaped(out_shape));
}

template <class Ops>
ValueOf<Ops> maxpool2d(const Ops& ops, const ValueOf<Ops>& x, const PoolGeometry& g) {
  const Shape& sh = Ops::t(x).shape();
  Shape win = pool_output_shape(sh, g);
  win.push_back(g.kernel * g.kernel);
  const auto idx = pool_window_index(sh, g);
  return max_last_axis(ops, ops.wrap(x, gather(Ops::t(x), idx, win)));
}

// exp(x) for x in cfg.exp_domain.
//
// u = x - lo is decomposed bitwise. Its bits above f-2 select a table entry
// exp(v/4 + lo) through a one-hot built from two groups of index bits (the
// upper group also absorbs the sign of u so that u < 0 yields 0). The low
// f-2 bits form r in [0, 1/4) and exp(r) = 1 + r + r^2 q(r), with q evaluated
// by Horner at f+4 fractional bits alongside the one-hot levels.
template <class Ops>
ValueOf<Ops> exp(const Ops& ops, const ValueOf<Ops>& x, const ApproxConfig& cfg) {
  using V = ValueOf<Ops>;
  const int f = ops.frac_bits();
  if (f < 3) throw std::invalid_argument("exp needs at least 3 fractional bits");
  const int n = cfg.exp_iters;
  if (n < 1) throw std::invalid_argument("exp_iters must be >= 1");
  const int hp = f + 4;
  const double lo = cfg.exp_domain.lo;
  const double span = cfg.exp_domain.hi - lo;

  const V u = ops.add_const(x, enc_at(-lo, f));
  std::vector<V> bits = ops.bits(u, bit_range_mask(0, f + 4) | (std::uint64_t{1} << 63));
  const V& sign = bits.back();

  std::vector<std::int64_t> pow2;
  for (int j = 0; j < f - 2; ++j) pow2.push_back(std::int64_t{1} << j);
  const V frac = weighted_sum(ops, std::vector<V>(bits.begin(), bits.begin() + (f - 2)), pow2);
  const V fh = ops.scale(frac, 16);
  auto mid = [&](int i) -> const V& { return bits[static_cast<std::size_t>(f - 2 + i)]; };

  // q(r) = sum_{k>=2}^{n} r^(k-2)/k!, Horner from the top; the first step is local.
  std::vector<RingElem> qc;
  {
    double fact = 1;
    for (int k = 1; k <= n; ++k) {
      fact *= k;
      if (k >= 2) qc.push_back(enc_at(1.0 / fact, hp));
    }
  }
  V q = ops.wrap(fh, RingTensor(Ops::t(fh).shape()));
  if (!qc.empty()) q = ops.add_const(q, qc.back());
  int horner_left = static_cast<int>(qc.size()) - 1;
  if (horner_left > 0) {
    q = ops.add_const(ops.trunc(ops.scale(fh, static_cast<std::int64_t>(qc.back())), hp),
                      qc[static_cast<std::size_t>(horner_left - 1)]);
    --horner_left;
  }

  // Table of exp(min(v/4, span) + lo) for the 7-bit index v.
  std::vector<std::int64_t> table(128);
  for (int v = 0; v < 128; ++v)
    table[static_cast<std::size_t>(v)] =
        static_cast<std::int64_t>(enc_at(std::exp(std::min(v / 4.0, span) + lo), f));

  std::vector<V> low{ops.add_const(ops.neg(mid(0)), 1), mid(0)};
  std::vector<V> high{ops.add_const(ops.neg(sign), 1)};
  V f2 = fh;
  V e_tab = fh;
  const int steps = horner_left;
  const int rounds = std::max(4, steps);
  for (int r = 1; r <= rounds; ++r) {
    PairList<Ops> ps;
    const bool horner = r <= steps;
    if (horner) ps.emplace_back(&q, &fh);
    if (r == 1 && n >= 2) ps.emplace_back(&fh, &fh);
    const std::size_t low_at = ps.size();
    if (r <= 3)
      for (const V& l : low) ps.emplace_back(&l, &mid(r));
    const std::size_t high_at = ps.size();
    if (r <= 3)
      for (const V& h : high) ps.emplace_back(&h, &mid(r + 3));
    std::vector<V> sums;
    const std::size_t sum_at = ps.size();
    if (r == 4) {
      for (std::size_t j = 0; j < high.size(); ++j) {
        std::vector<std::int64_t> w(table.begin() + static_cast<std::ptrdiff_t>(16 * j),
                                    table.begin() + static_cast<std::ptrdiff_t>(16 * j + 16));
        sums.push_back(weighted_sum(ops, low, w));
      }
      for (std::size_t j = 0; j < high.size(); ++j) ps.emplace_back(&high[j], &sums[j]);
    }
    std::vector<V> res = ops.mul_many(ps);
    if (r <= 3) {
      std::vector<V> nl(low.size() * 2, low[0]);
      for (std::size_t k = 0; k < low.size(); ++k) {
        nl[k] = ops.sub(low[k], res[low_at + k]);
        nl[k + low.size()] = res[low_at + k];
      }
      std::vector<V> nh(high.size() * 2, high[0]);
      for (std::size_t k = 0; k < high.size(); ++k) {
        nh[k] = ops.sub(high[k], res[high_at + k]);
        nh[k + high.size()] = res[high_at + k];
      }
      low = std::move(nl);
      high = std::move(nh);
    }
    if (r == 4) {
      std::vector<V> parts(res.begin() + static_cast<std::ptrdiff_t>(sum_at), res.end());
      e_tab = sum_values(ops, parts);
    }
    if (r == 1 && n >= 2) f2 = ops.trunc(res[horner ? 1 : 0], hp);
    if (horner)
      q = ops.add_const(ops.trunc(res[0], hp), qc[static_cast<std::size_t>(steps - r)]);
  }
  // g stays at f+4 bits: the table entry reaches e^8, so dropping those bits
  // first would cost about 0.05 absolute at the top of the domain.
  const V g = n >= 2 ? ops.add(fh, ops.trunc(ops.mul(q, f2), hp)) : fh;
  return ops.add(e_tab, ops.trunc(ops.mul(e_tab, g), hp));
}

// 1/x on d with Newton steps y <- y (2 - x y). A single-octave domain starts
// from a constant; otherwise the start is picked from the leading-one position.
template <class Ops>
ValueOf<Ops> reciprocal(const Ops& ops, const ValueOf<Ops>& x, int iters, const Domain& d) {
  using V = ValueOf<Ops>;
  const int f = ops.frac_bits();
  V y = x;
  if (d.hi <= 2 * d.lo) {
    if (!(d.lo > 0)) throw std::invalid_argument("reciprocal: domain must be positive");
    y = ops.add_const(ops.wrap(x, RingTensor(Ops::t(x).shape())), enc_at(2.0 / (3.0 * d.lo), f));
  } else {
    const auto [lo, hi] = domain_bits(d, f, "reciprocal");
    const std::vector<V> h = ops.leading_one_hot(x, lo, hi);
    std::vector<std::int64_t> w;
    for (int k = lo; k <= hi; ++k)
      w.push_back(static_cast<std::int64_t>(enc_at((2.0 / 3.0) * std::ldexp(1.0, f - k), f)));
    y = weighted_sum(ops, h, w);
  }
  const RingElem two = enc_at(2.0, f);
  for (int i = 0; i < iters; ++i) {
    const V t = ops.trunc(ops.mul(x, y), f);
    y = ops.trunc(ops.mul(y, ops.add_const(ops.neg(t), two)), f);
  }
  return y;
}

// 1/sqrt(x) with y <- (3y - (x y) y^2) / 2; x*y and y^2 share a round, and
// y^2 is kept at f+4 bits.
template <class Ops>
ValueOf<Ops> rsqrt(const Ops& ops, const ValueOf<Ops>& x, int iters, const Domain& d) {
  using V = ValueOf<Ops>;
  const int f = ops.frac_bits();
  const auto [lo, hi] = domain_bits(d, f, "rsqrt");
  const std::vector<V> h = ops.leading_one_hot(x, lo, hi);
  std::vector<std::int64_t> w;
  for (int k = lo; k <= hi; ++k)
    w.push_back(static_cast<std::int64_t>(enc_at(std::exp2(-(k - f) / 2.0 - 0.25), f)));
  V y = weighted_sum(ops, h, w);
  const int extra = std::min(4, f);
  for (int i = 0; i < iters; ++i) {
    const PairList<Ops> ps{{&x, &y}, {&y, &y}};
    std::vector<V> r = ops.mul_many(ps);
    const V xy = ops.trunc(r[0], f);
    const V y2 = ops.trunc(r[1], f - extra);
    const V t = ops.trunc(ops.mul(xy, y2), f + extra);
    y = ops.trunc(ops.sub(ops.scale(y, 3), t), 1);
  }
  return y;
}

template <class Ops>
ValueOf<Ops> sigmoid(const Ops& ops, const ValueOf<Ops>& x, const ApproxConfig& cfg) {
  using V = ValueOf<Ops>;
  const int f = ops.frac_bits();
  const RingElem one = enc_at(1.0, f);
  const V c = ops.gtz(x);
  const V neg_abs = ops.add(x, ops.mul(c, ops.scale(x, -2)));
  const V e = exp(ops, neg_abs, cfg);
  const V r = reciprocal(ops, ops.add_const(e, one), cfg.newton_iters_recip, Domain{1.0, 2.0});
  const V low = ops.add_const(ops.neg(r), one);
  const V diff = ops.add_const(ops.scale(r, 2), RingElem{0} - one);
  return ops.add(low, ops.mul(c, diff));
}

template <class Ops>
ValueOf<Ops> silu(const Ops& ops, const ValueOf<Ops>& x, const ApproxConfig& cfg) {
  return ops.trunc(ops.mul(x, sigmoid(ops, x, cfg)), ops.frac_bits());
}

template <class Ops>
ValueOf<Ops> elu(const Ops& ops, const ValueOf<Ops>& x, const ApproxConfig& cfg) {
  const RingElem one = enc_at(1.0, ops.frac_bits());
  const auto c = ops.gtz(x);
  const auto em1 = ops.add_const(exp(ops, x, cfg), RingElem{0} - one);
  return mux(ops, c, x, em1);
}

// ln(x) = e ln2 + ln(m), x = m 2^e with m in [1, 2). ln(m) = t Q(t), t = m - 1,
// Q a degree-7 minimax fit.
inline constexpr double kLogCoeffs[] = {
    9.999997807585e-01,  -4.999717452301e-01, 3.327192838339e-01,  -2.447477417848e-01,
    1.768747670042e-01,  -1.068500286375e-01, 4.349389981533e-02,  -8.371152549444e-03,
};

template <class Ops>
ValueOf<Ops> log(const Ops& ops, const ValueOf<Ops>& x, const ApproxConfig& cfg) {
  using V = ValueOf<Ops>;
  const int f = ops.frac_bits();
  const auto [lo, hi] = domain_bits(cfg.log_domain, f, "log");
  const std::vector<V> h = ops.leading_one_hot(x, lo, hi);
  std::vector<std::int64_t> pinv, ebias;
  for (int k = lo; k <= hi; ++k) {
    pinv.push_back(static_cast<std::int64_t>(enc_at(std::ldexp(1.0, f - k), f)));
    ebias.push_back(static_cast<std::int64_t>(enc_at((k - f) * std::log(2.0), f)));
  }
  const V m = ops.trunc(ops.mul(x, weighted_sum(ops, h, pinv)), f);
  const V t = ops.add_const(m, RingElem{0} - enc_at(1.0, f));
  constexpr int deg = static_cast<int>(std::size(kLogCoeffs)) - 1;
  V q = ops.add_const(
      ops.trunc(ops.scale(t, static_cast<std::int64_t>(enc_at(kLogCoeffs[deg], f))), f),
      enc_at(kLogCoeffs[deg - 1], f));
  for (int j = deg - 2; j >= 0; --j)
    q = ops.add_const(ops.trunc(ops.mul(q, t), f), enc_at(kLogCoeffs[j], f));
  return ops.add(weighted_sum(ops, h, ebias), ops.trunc(ops.mul(t, q), f));
}

template <class Ops>
ValueOf<Ops> log_softmax(const Ops& ops, const ValueOf<Ops>& x, const ApproxConfig& cfg) {
  using V = ValueOf<Ops>;
  const Shape& sh = Ops::t(x).shape();
  if (sh.empty()) throw ShapeError("log_softmax of a scalar");
  const std::size_t n = sh.back();
  const V m = max_last_axis(ops, x);
  const V s = ops.sub(x, ops.wrap(x, expand_last(Ops::t(m), n)));
  const V e = exp(ops, s, cfg);
  const V total = ops.wrap(x, sum_trailing(Ops::t(e), sh.size() - 1));
  const V l = log(ops, total, cfg);
  return ops.sub(s, ops.wrap(x, expand_last(Ops::t(l), n)));
}

}  // namespace mpcnn::detail
