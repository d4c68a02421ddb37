#include "mpcnn/prg.hpp"

#include <sodium.h>

#include <cstring>
#include <stdexcept>
#include <vector>

namespace mpcnn {

namespace {

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

}  // namespace

Seed random_seed() {
  ensure_sodium();
  Seed s;
  randombytes_buf(s.data(), s.size());
  return s;
}

Seed derive_seed(const Seed& parent, std::uint64_t label) {
  ensure_sodium();
  Seed out;
  std::uint8_t msg[8];
  std::memcpy(msg, &label, 8);
  crypto_generichash(out.data(), out.size(), msg, sizeof(msg), parent.data(), parent.size());
  return out;
}

Prg::Prg(const Seed& key, std::uint64_t domain) : key_(key) {
  ensure_sodium();
  std::memcpy(nonce_.data(), &domain, 8);
}

void Prg::fill(std::span<std::uint64_t> out) {
  if (out.empty()) return;
  const std::size_t bytes = out.size() * 8;
  const std::size_t blocks = (bytes + 63) / 64;
  auto* dst = reinterpret_cast<unsigned char*>(out.data());
  if (bytes == blocks * 64) {
    std::memset(dst, 0, bytes);
    crypto_stream_chacha20_xor_ic(dst, dst, bytes, nonce_.data(), counter_, key_.data());
  } else {
    std::vector<unsigned char> buf(blocks * 64, 0);
    crypto_stream_chacha20_xor_ic(buf.data(), buf.data(), buf.size(), nonce_.data(), counter_,
                                  key_.data());
    std::memcpy(dst, buf.data(), bytes);
  }
  counter_ += blocks;
}

std::uint64_t Prg::next() {
  std::uint64_t v;
  fill({&v, 1});
  return v;
}

RingTensor Prg::tensor(const Shape& shape) {
  RingTensor t(shape);
  fill(t.data());
  return t;
}

}  // namespace mpcnn
