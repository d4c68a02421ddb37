#include "mpcnn/ring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mpcnn {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

FixedPointConfig::FixedPointConfig(int bits) : frac_bits(bits) {
  if (bits < 1 || bits > 32)
    throw std::invalid_argument("frac_bits must be in [1, 32], got " + std::to_string(bits));
}

RingElem encode(double x, const FixedPointConfig& cfg) {
  const double scaled = x * cfg.scale();
  constexpr double kLimit = 9223372036854775808.0;  // 2^63
  if (!(std::fabs(scaled) < kLimit))
    throw EncodeRangeError("value out of fixed-point range: " + std::to_string(x));
  return static_cast<RingElem>(std::llround(scaled));
}

double decode(RingElem v, const FixedPointConfig& cfg) {
  return static_cast<double>(as_signed(v)) / cfg.scale();
}

RingTensor::RingTensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0) {}

RingTensor::RingTensor(Shape shape, std::vector<RingElem> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size())
    throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

RingTensor::RingTensor(Shape shape, RingElem fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {}

RingTensor RingTensor::encode(std::span<const double> values, Shape shape,
                              const FixedPointConfig& cfg) {
  std::vector<RingElem> data(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) data[i] = mpcnn::encode(values[i], cfg);
  return RingTensor(std::move(shape), std::move(data));
}

std::vector<double> RingTensor::decode(const FixedPointConfig& cfg) const {
  std::vector<double> out(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) out[i] = mpcnn::decode(data_[i], cfg);
  return out;
}

RingTensor RingTensor::reshaped(Shape shape) const& {
  RingTensor t = *this;
  return std::move(t).reshaped(std::move(shape));
}

RingTensor RingTensor::reshaped(Shape shape) && {
  if (numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

void require_same_shape(const RingTensor& a, const RingTensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

namespace {

template <class F>
RingTensor zip(const RingTensor& a, const RingTensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  RingTensor out(a.shape());
  const RingElem* pa = a.ptr();
  const RingElem* pb = b.ptr();
  RingElem* po = out.ptr();
  for (std::size_t i = 0, n = a.size(); i < n; ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

template <class F>
RingTensor map(const RingTensor& a, F f) {
  RingTensor out(a.shape());
  const RingElem* pa = a.ptr();
  RingElem* po = out.ptr();
  for (std::size_t i = 0, n = a.size(); i < n; ++i) po[i] = f(pa[i]);
  return out;
}

}  // namespace

RingTensor ring_add(const RingTensor& a, const RingTensor& b) {
  return zip(a, b, "ring_add", [](RingElem x, RingElem y) { return x + y; });
}
RingTensor ring_sub(const RingTensor& a, const RingTensor& b) {
  return zip(a, b, "ring_sub", [](RingElem x, RingElem y) { return x - y; });
}
RingTensor ring_neg(const RingTensor& a) {
  return map(a, [](RingElem x) { return RingElem{0} - x; });
}
RingTensor ring_add_scalar(const RingTensor& a, RingElem c) {
  return map(a, [c](RingElem x) { return x + c; });
}
RingTensor ring_scale(const RingTensor& a, std::int64_t k) {
  const auto m = static_cast<RingElem>(k);
  return map(a, [m](RingElem x) { return x * m; });
}
RingTensor ring_mul(const RingTensor& a, const RingTensor& b) {
  return zip(a, b, "ring_mul", [](RingElem x, RingElem y) { return x * y; });
}

RingTensor ring_mul_trunc(const RingTensor& a, const RingTensor& b, const FixedPointConfig& cfg) {
  const int f = cfg.frac_bits;
  return zip(a, b, "ring_mul_trunc", [f](RingElem x, RingElem y) {
    const __int128 p = static_cast<__int128>(as_signed(x)) * as_signed(y);
    return static_cast<RingElem>(static_cast<unsigned __int128>(p >> f));
  });
}

RingTensor ring_trunc(const RingTensor& a, int bits) {
  return map(a, [bits](RingElem x) { return static_cast<RingElem>(as_signed(x) >> bits); });
}
RingTensor ring_xor(const RingTensor& a, const RingTensor& b) {
  return zip(a, b, "ring_xor", [](RingElem x, RingElem y) { return x ^ y; });
}
RingTensor ring_and(const RingTensor& a, const RingTensor& b) {
  return zip(a, b, "ring_and", [](RingElem x, RingElem y) { return x & y; });
}

RingTensor ring_matmul(const RingTensor& a, const RingTensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  RingTensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    RingElem* row = out.ptr() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const RingElem av = a[i * k + p];
      const RingElem* brow = b.ptr() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

Shape conv_output_shape(const Shape& x, const Shape& w, const ConvGeometry& g) {
  if (x.size() != 4 || w.size() != 4)
    throw ShapeError("conv2d expects N x C x H x W input and O x C x kh x kw kernel, got " +
                     shape_str(x) + " and " + shape_str(w));
  if (x[1] != w[1])
    throw ShapeError("conv2d channel mismatch: " + shape_str(x) + " vs " + shape_str(w));
  if (g.stride_h == 0 || g.stride_w == 0) throw ShapeError("conv2d stride must be positive");
  const std::size_t hp = x[2] + 2 * g.pad_h, wp = x[3] + 2 * g.pad_w;
  if (hp < w[2] || wp < w[3])
    throw ShapeError("conv2d kernel larger than padded input: " + shape_str(x) + " vs " +
                     shape_str(w));
  return {x[0], w[0], (hp - w[2]) / g.stride_h + 1, (wp - w[3]) / g.stride_w + 1};
}

RingTensor ring_conv2d(const RingTensor& x, const RingTensor& w, const ConvGeometry& g) {
  const Shape os = conv_output_shape(x.shape(), w.shape(), g);
  const std::size_t N = os[0], O = os[1], OH = os[2], OW = os[3];
  const std::size_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t KH = w.dim(2), KW = w.dim(3);
  RingTensor out(os);
  const auto sh = static_cast<std::ptrdiff_t>(g.stride_h);
  const auto sw = static_cast<std::ptrdiff_t>(g.stride_w);
  const auto ph = static_cast<std::ptrdiff_t>(g.pad_h);
  const auto pw = static_cast<std::ptrdiff_t>(g.pad_w);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      RingElem* obase = out.ptr() + (n * O + o) * OH * OW;
      for (std::size_t c = 0; c < C; ++c) {
        const RingElem* xbase = x.ptr() + (n * C + c) * H * W;
        const RingElem* wbase = w.ptr() + (o * C + c) * KH * KW;
        for (std::size_t ki = 0; ki < KH; ++ki) {
          for (std::size_t kj = 0; kj < KW; ++kj) {
            const RingElem wv = wbase[ki * KW + kj];
            if (wv == 0) continue;
            // valid output columns: 0 <= ow*sw + kj - pw < W
            const auto kjd = static_cast<std::ptrdiff_t>(kj);
            std::ptrdiff_t lo = pw - kjd;
            std::ptrdiff_t lo_ow = lo <= 0 ? 0 : (lo + sw - 1) / sw;
            std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(W) - 1 + pw - kjd;
            if (hi < 0) continue;
            std::ptrdiff_t hi_ow = std::min<std::ptrdiff_t>(hi / sw, OW - 1);
            if (lo_ow > hi_ow) continue;
            for (std::size_t oh = 0; oh < OH; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * sh +
                                        static_cast<std::ptrdiff_t>(ki) - ph;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              const RingElem* xrow = xbase + ih * static_cast<std::ptrdiff_t>(W) - pw + kjd;
              RingElem* orow = obase + oh * OW;
              if (sw == 1) {
                for (std::ptrdiff_t ow = lo_ow; ow <= hi_ow; ++ow) orow[ow] += wv * xrow[ow];
              } else {
                for (std::ptrdiff_t ow = lo_ow; ow <= hi_ow; ++ow) orow[ow] += wv * xrow[ow * sw];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

// outer x axis x inner decomposition used by concat/split.
struct AxisView {
  std::size_t outer = 1, len = 0, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

RingTensor concat(std::span<const RingTensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != out_shape[i])
        throw ShapeError("concat shape mismatch " + shape_str(s) + " vs " + shape_str(out_shape));
    total += s[axis];
  }
  out_shape[axis] = total;
  RingTensor out(out_shape);
  const AxisView ov = axis_view(out_shape, axis);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const AxisView pv = axis_view(p.shape(), axis);
    const std::size_t chunk = pv.len * pv.inner;
    for (std::size_t o = 0; o < ov.outer; ++o)
      std::copy_n(p.ptr() + o * chunk, chunk, out.ptr() + (o * ov.len + offset) * ov.inner);
    offset += pv.len;
  }
  return out;
}

std::vector<RingTensor> split(const RingTensor& x, std::span<const std::size_t> sizes,
                              std::size_t axis) {
  const AxisView xv = axis_view(x.shape(), axis);
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != xv.len)
    throw ShapeError("split sizes do not sum to axis length of " + shape_str(x.shape()));
  std::vector<RingTensor> out;
  std::size_t offset = 0;
  for (std::size_t sz : sizes) {
    Shape s = x.shape();
    s[axis] = sz;
    RingTensor part(s);
    const std::size_t chunk = sz * xv.inner;
    for (std::size_t o = 0; o < xv.outer; ++o)
      std::copy_n(x.ptr() + (o * xv.len + offset) * xv.inner, chunk, part.ptr() + o * chunk);
    offset += sz;
    out.push_back(std::move(part));
  }
  return out;
}

RingTensor upsample_nearest2x(const RingTensor& x) {
  if (x.rank() < 2) throw ShapeError("upsample needs at least two spatial axes");
  Shape s = x.shape();
  const std::size_t H = s[s.size() - 2], W = s[s.size() - 1];
  const std::size_t planes = x.size() / (H * W);
  s[s.size() - 2] = 2 * H;
  s[s.size() - 1] = 2 * W;
  RingTensor out(s);
  for (std::size_t p = 0; p < planes; ++p) {
    const RingElem* src = x.ptr() + p * H * W;
    RingElem* dst = out.ptr() + p * 4 * H * W;
    for (std::size_t i = 0; i < 2 * H; ++i)
      for (std::size_t j = 0; j < 2 * W; ++j) dst[i * 2 * W + j] = src[(i / 2) * W + j / 2];
  }
  return out;
}

RingTensor downsample2x(const RingTensor& x) {
  if (x.rank() < 2) throw ShapeError("downsample needs at least two spatial axes");
  Shape s = x.shape();
  const std::size_t H = s[s.size() - 2], W = s[s.size() - 1];
  const std::size_t planes = x.size() / (H * W);
  const std::size_t OH = (H + 1) / 2, OW = (W + 1) / 2;
  s[s.size() - 2] = OH;
  s[s.size() - 1] = OW;
  RingTensor out(s);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j)
        out[(p * OH + i) * OW + j] = x[(p * H + 2 * i) * W + 2 * j];
  return out;
}

RingTensor gather(const RingTensor& x, std::span<const std::size_t> index, Shape out_shape) {
  if (numel(out_shape) != index.size()) throw ShapeError("gather: index count != output size");
  std::vector<RingElem> data(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.size()) throw ShapeError("gather: index out of range");
    data[i] = x[index[i]];
  }
  return RingTensor(std::move(out_shape), std::move(data));
}

RingTensor expand_channels(const RingTensor& v, const Shape& target) {
  if (target.size() < 2 || v.size() != target[1])
    throw ShapeError("expand_channels: " + shape_str(v.shape()) + " onto " + shape_str(target));
  const std::size_t N = target[0], C = target[1];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < target.size(); ++i) inner *= target[i];
  RingTensor out(target);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      std::fill_n(out.ptr() + (n * C + c) * inner, inner, v[c]);
  return out;
}

RingTensor expand_last(const RingTensor& v, std::size_t n) {
  Shape s = v.shape();
  s.push_back(n);
  RingTensor out(s);
  for (std::size_t i = 0; i < v.size(); ++i) std::fill_n(out.ptr() + i * n, n, v[i]);
  return out;
}

RingTensor sum_trailing(const RingTensor& x, std::size_t keep) {
  if (keep > x.rank()) throw ShapeError("sum_trailing: keep exceeds rank");
  Shape s(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(keep));
  const std::size_t outer = numel(s);
  const std::size_t inner = outer == 0 ? 0 : x.size() / outer;
  RingTensor out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    RingElem acc = 0;
    const RingElem* p = x.ptr() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) acc += p[i];
    out[o] = acc;
  }
  return out;
}

RingTensor permute(const RingTensor& x, std::span<const std::size_t> order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw ShapeError("permute: order length != rank");
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(order[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  RingTensor out(out_shape);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[order[i]];
    out[flat] = x[src];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

RingTensor slice_last(const RingTensor& x, std::size_t begin, std::size_t step,
                      std::size_t count) {
  if (x.rank() == 0) throw ShapeError("slice_last on scalar");
  const std::size_t L = x.shape().back();
  if (count > 0 && begin + step * (count - 1) >= L) throw ShapeError("slice_last out of range");
  Shape s = x.shape();
  s.back() = count;
  const std::size_t rows = L == 0 ? 0 : x.size() / L;
  RingTensor out(s);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < count; ++i) out[r * count + i] = x[r * L + begin + i * step];
  return out;
}

}  // namespace mpcnn
