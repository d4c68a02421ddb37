#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "mpcnn/errors.hpp"
#include "mpcnn/ring.hpp"

namespace mpcnn::detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_shape(const Shape& s) {
    put<std::uint8_t>(static_cast<std::uint8_t>(s.size()));
    for (auto d : s) put<std::uint64_t>(d);
  }
  void put_words(std::span<const RingElem> w) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(w.data());
    buf_.insert(buf_.end(), p, p + 8 * w.size());
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }
  Shape get_shape() {
    const auto r = get<std::uint8_t>();
    Shape s(r);
    for (auto& d : s) d = static_cast<std::size_t>(get<std::uint64_t>());
    return s;
  }
  void get_words(std::span<RingElem> out) {
    need(8 * out.size());
    std::memcpy(out.data(), b_.data() + off_, 8 * out.size());
    off_ += 8 * out.size();
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
    off_ += n;
    return s;
  }
  bool done() const { return off_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (off_ + n > b_.size()) throw FormatError("truncated message");
  }
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

inline std::vector<std::uint8_t> tensor_bytes(const RingTensor& t) {
  std::vector<std::uint8_t> out(8 * t.size());
  std::memcpy(out.data(), t.ptr(), out.size());
  return out;
}

inline RingTensor tensor_from_bytes(std::span<const std::uint8_t> b, const Shape& shape) {
  RingTensor t(shape);
  if (b.size() != 8 * t.size())
    throw FormatError("payload of " + std::to_string(b.size()) + " bytes does not fit " +
                      shape_str(shape));
  std::memcpy(t.ptr(), b.data(), b.size());
  return t;
}

}  // namespace mpcnn::detail
