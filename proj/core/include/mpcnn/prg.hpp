#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "mpcnn/ring.hpp"

namespace mpcnn {

using Seed = std::array<std::uint8_t, 32>;

Seed random_seed();
// Derive a child key from a parent key and a 64-bit label (BLAKE2b).
Seed derive_seed(const Seed& parent, std::uint64_t label);

// ChaCha20 keystream in counter mode. The 64-bit nonce separates domains
// that share one key.
class Prg {
 public:
  Prg(const Seed& key, std::uint64_t domain);

  void fill(std::span<std::uint64_t> out);
  std::uint64_t next();
  RingTensor tensor(const Shape& shape);
  std::uint64_t blocks_used() const { return counter_; }

 private:
  Seed key_;
  std::array<std::uint8_t, 8> nonce_;
  std::uint64_t counter_ = 0;
};

}  // namespace mpcnn
