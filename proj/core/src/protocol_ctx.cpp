#include "mpcnn/protocol_ctx.hpp"

#include <algorithm>
#include <cstring>

#include "bytes.hpp"

namespace mpcnn {

namespace {
constexpr std::uint64_t kPrzsDomain = 0x505a5253'00000001ull;
}

PrzsSeedPair przs_setup(Channel& ch) { return przs_setup(ch, {}); }

PrzsSeedPair przs_setup(Channel& ch, std::span<const std::uint8_t> context) {
  PrzsSeedPair s;
  s.seed_self = random_seed();
  Bytes mine(s.seed_self.begin(), s.seed_self.end());
  mine.insert(mine.end(), context.begin(), context.end());
  const Bytes peer = ch.exchange("PRZS_SETUP", mine);
  if (peer.size() != mine.size())
    throw TransportError(TransportError::Kind::kLengthMismatch, "bad PRZS setup length");
  if (!std::equal(context.begin(), context.end(), peer.begin() + s.seed_peer.size()))
    throw TransportError(TransportError::Kind::kProtocol,
                         "session setup mismatch: parties disagree on the session plan "
                         "(model, batch, approximation or randomness mode)");
  std::memcpy(s.seed_peer.data(), peer.data(), s.seed_peer.size());
  return s;
}

Przs::Przs(const PrzsSeedPair& seeds)
    : self_(seeds.seed_self, kPrzsDomain), peer_(seeds.seed_peer, kPrzsDomain) {}

RingTensor Przs::zero_share(const Shape& shape) {
  return ring_sub(self_.tensor(shape), peer_.tensor(shape));
}

ProtocolCtx::ProtocolCtx(Channel& channel, RandomnessSource& source, const PrzsSeedPair& seeds,
                         FixedPointConfig fp, DealerClient* dealer)
    : party_(channel.self()), channel_(&channel), source_(&source), fp_(fp), przs_(seeds),
      dealer_(dealer) {}

ProtocolCtx::ProtocolCtx(PartyId party, RandomnessSource& source, FixedPointConfig fp)
    : party_(party), source_(&source), fp_(fp) {}

ProtocolCtx ProtocolCtx::planning(PartyId party, RandomnessSource& source, FixedPointConfig fp) {
  return ProtocolCtx(party, source, fp);
}

RingTensor ProtocolCtx::zero_share(const Shape& shape) {
  if (!przs_) return RingTensor(shape);
  return przs_->zero_share(shape);
}

std::vector<RingTensor> ProtocolCtx::exchange(std::string_view tag,
                                              std::span<const RingTensor> mine) {
  std::vector<RingTensor> out;
  out.reserve(mine.size());
  if (planning()) {
    for (const auto& t : mine) out.emplace_back(t.shape());
    return out;
  }
  std::size_t words = 0;
  for (const auto& t : mine) words += t.size();
  Bytes payload(8 * words);
  std::size_t off = 0;
  for (const auto& t : mine) {
    std::memcpy(payload.data() + off, t.ptr(), 8 * t.size());
    off += 8 * t.size();
  }
  const Bytes peer = channel_->exchange(tag, payload);
  off = 0;
  for (const auto& t : mine) {
    RingTensor p(t.shape());
    if (!peer.empty()) std::memcpy(p.ptr(), peer.data() + off, 8 * t.size());
    off += 8 * t.size();
    out.push_back(std::move(p));
  }
  return out;
}

RingTensor ProtocolCtx::exchange(std::string_view tag, const RingTensor& mine) {
  return std::move(exchange(tag, std::span<const RingTensor>(&mine, 1)).front());
}

void ProtocolCtx::send(std::string_view tag, const RingTensor& t) {
  if (planning()) return;
  channel_->send(tag, detail::tensor_bytes(t));
}

RingTensor ProtocolCtx::recv(std::string_view tag, const Shape& shape) {
  if (planning()) return RingTensor(shape);
  return detail::tensor_from_bytes(channel_->recv(tag), shape);
}

Transcript ProtocolCtx::transcript() const {
  Transcript t;
  if (channel_) t = channel_->measure();
  if (dealer_) {
    const DealerStats d = dealer_->stats();
    t.dealer_bytes_sent += d.bytes_sent;
    t.dealer_bytes_received += d.bytes_received;
    t.dealer_requests += d.requests;
  }
  return t;
}

}  // namespace mpcnn
