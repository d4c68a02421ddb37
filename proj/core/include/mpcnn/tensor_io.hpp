#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mpcnn/ring.hpp"

namespace mpcnn {

// Real-valued tensor as stored in an RTF1 container:
//   "RTF1" | u8 rank | rank x u64 LE dims | f32 LE payload
struct RealTensor {
  Shape shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> serialize_rtf1(const RealTensor& t);
RealTensor parse_rtf1(std::span<const std::uint8_t> bytes);

RealTensor read_rtf1(const std::filesystem::path& path);
void write_rtf1(const std::filesystem::path& path, const RealTensor& t);

RingTensor encode_real(const RealTensor& t, const FixedPointConfig& cfg = {});
RealTensor decode_ring(const RingTensor& t, const FixedPointConfig& cfg = {});
RingTensor load_rtf1(const std::filesystem::path& path, const FixedPointConfig& cfg = {});

}  // namespace mpcnn
