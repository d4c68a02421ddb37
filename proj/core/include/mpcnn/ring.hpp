#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpcnn/errors.hpp"

namespace mpcnn {

// Elements of Z_{2^64}. Arithmetic wraps; values >= 2^63 read as negative.
using RingElem = std::uint64_t;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

inline std::int64_t as_signed(RingElem v) { return static_cast<std::int64_t>(v); }
inline unsigned msb(RingElem v) { return static_cast<unsigned>(v >> 63); }

struct FixedPointConfig {
  int frac_bits = 16;

  FixedPointConfig() = default;
  explicit FixedPointConfig(int bits);

  double scale() const { return static_cast<double>(std::uint64_t{1} << frac_bits); }
  RingElem one() const { return RingElem{1} << frac_bits; }
};

RingElem encode(double x, const FixedPointConfig& cfg = {});
double decode(RingElem v, const FixedPointConfig& cfg = {});

class RingTensor {
 public:
  RingTensor() = default;
  explicit RingTensor(Shape shape);
  RingTensor(Shape shape, std::vector<RingElem> data);
  RingTensor(Shape shape, RingElem fill);

  static RingTensor encode(std::span<const double> values, Shape shape,
                           const FixedPointConfig& cfg = {});
  std::vector<double> decode(const FixedPointConfig& cfg = {}) const;

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<RingElem> data() { return data_; }
  std::span<const RingElem> data() const { return data_; }
  RingElem* ptr() { return data_.data(); }
  const RingElem* ptr() const { return data_.data(); }
  RingElem& operator[](std::size_t i) { return data_[i]; }
  RingElem operator[](std::size_t i) const { return data_[i]; }

  RingTensor reshaped(Shape shape) const&;
  RingTensor reshaped(Shape shape) &&;

  bool operator==(const RingTensor&) const = default;

 private:
  Shape shape_;
  std::vector<RingElem> data_;
};

void require_same_shape(const RingTensor& a, const RingTensor& b, const char* op);

RingTensor ring_add(const RingTensor& a, const RingTensor& b);
RingTensor ring_sub(const RingTensor& a, const RingTensor& b);
RingTensor ring_neg(const RingTensor& a);
RingTensor ring_add_scalar(const RingTensor& a, RingElem c);
RingTensor ring_scale(const RingTensor& a, std::int64_t k);
// Raw elementwise product, no truncation.
RingTensor ring_mul(const RingTensor& a, const RingTensor& b);
RingTensor ring_mul_trunc(const RingTensor& a, const RingTensor& b,
                          const FixedPointConfig& cfg = {});
// Arithmetic right shift of every element.
RingTensor ring_trunc(const RingTensor& a, int bits);
RingTensor ring_xor(const RingTensor& a, const RingTensor& b);
RingTensor ring_and(const RingTensor& a, const RingTensor& b);

// [M x K] * [K x N], raw.
RingTensor ring_matmul(const RingTensor& a, const RingTensor& b);

struct ConvGeometry {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  bool operator==(const ConvGeometry&) const = default;
};

// x: N x C x H x W, w: O x C x kh x kw. Zero padding, raw products.
Shape conv_output_shape(const Shape& x, const Shape& w, const ConvGeometry& g);
RingTensor ring_conv2d(const RingTensor& x, const RingTensor& w, const ConvGeometry& g);

// Layout helpers. All of them only move elements, so they apply verbatim to
// shares.
RingTensor concat(std::span<const RingTensor> parts, std::size_t axis);
std::vector<RingTensor> split(const RingTensor& x, std::span<const std::size_t> sizes,
                              std::size_t axis);
// Nearest neighbour 2x on the last two axes.
RingTensor upsample_nearest2x(const RingTensor& x);
RingTensor downsample2x(const RingTensor& x);
RingTensor gather(const RingTensor& x, std::span<const std::size_t> index, Shape out);
// Repeat a per-channel vector [C] over N x C x (rest...).
RingTensor expand_channels(const RingTensor& v, const Shape& target);
// Repeat along a new trailing axis of length n: [...] -> [..., n].
RingTensor expand_last(const RingTensor& v, std::size_t n);
// Sum over all axes after `keep` leading ones.
RingTensor sum_trailing(const RingTensor& x, std::size_t keep);
RingTensor permute(const RingTensor& x, std::span<const std::size_t> order);
// Take x[..., begin : begin + step*count : step] on the last axis.
RingTensor slice_last(const RingTensor& x, std::size_t begin, std::size_t step,
                      std::size_t count);

}  // namespace mpcnn
