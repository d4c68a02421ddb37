#include "mpcnn/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mpcnn {

static_assert(std::endian::native == std::endian::little, "RTF1 I/O assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'R', 'T', 'F', '1'};
}

std::vector<std::uint8_t> serialize_rtf1(const RealTensor& t) {
  if (t.shape.size() > 255) throw FormatError("RTF1 rank exceeds 255");
  if (numel(t.shape) != t.values.size()) throw ShapeError("RTF1 payload does not match shape");
  std::vector<std::uint8_t> out(5 + 8 * t.shape.size() + 4 * t.values.size());
  std::memcpy(out.data(), kMagic, 4);
  out[4] = static_cast<std::uint8_t>(t.shape.size());
  std::size_t off = 5;
  for (std::size_t d : t.shape) {
    const std::uint64_t v = d;
    std::memcpy(out.data() + off, &v, 8);
    off += 8;
  }
  std::memcpy(out.data() + off, t.values.data(), 4 * t.values.size());
  return out;
}

RealTensor parse_rtf1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not an RTF1 container");
  const std::size_t rank = bytes[4];
  std::size_t off = 5;
  if (bytes.size() < off + 8 * rank) throw FormatError("RTF1 header truncated");
  RealTensor t;
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint64_t d;
    std::memcpy(&d, bytes.data() + off, 8);
    off += 8;
    t.shape.push_back(static_cast<std::size_t>(d));
  }
  const std::size_t n = numel(t.shape);
  if (bytes.size() != off + 4 * n)
    throw FormatError("RTF1 payload size " + std::to_string(bytes.size() - off) +
                      " bytes, expected " + std::to_string(4 * n));
  t.values.resize(n);
  std::memcpy(t.values.data(), bytes.data() + off, 4 * n);
  return t;
}

RealTensor read_rtf1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_rtf1(bytes);
}

void write_rtf1(const std::filesystem::path& path, const RealTensor& t) {
  const auto bytes = serialize_rtf1(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RingTensor encode_real(const RealTensor& t, const FixedPointConfig& cfg) {
  std::vector<RingElem> data(t.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = encode(t.values[i], cfg);
  return RingTensor(t.shape, std::move(data));
}

RealTensor decode_ring(const RingTensor& t, const FixedPointConfig& cfg) {
  RealTensor r{t.shape(), std::vector<float>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) r.values[i] = static_cast<float>(decode(t[i], cfg));
  return r;
}

RingTensor load_rtf1(const std::filesystem::path& path, const FixedPointConfig& cfg) {
  return encode_real(read_rtf1(path), cfg);
}

}  // namespace mpcnn
