#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mpcnn/dealer.hpp"
#include "mpcnn/prg.hpp"
#include "mpcnn/ring.hpp"
#include "mpcnn/transport.hpp"

namespace mpcnn {

// Seeds arranged so PRG(self) - PRG(peer) at P0 and at P1 cancel.
struct PrzsSeedPair {
  Seed seed_self{};
  Seed seed_peer{};
};

// One round: each party contributes a fresh seed.
PrzsSeedPair przs_setup(Channel& ch);
// Same round, also carrying a session description both sides must agree on.
// A mismatch raises TransportError(kProtocol).
PrzsSeedPair przs_setup(Channel& ch, std::span<const std::uint8_t> context);

class Przs {
 public:
  explicit Przs(const PrzsSeedPair& seeds);
  RingTensor zero_share(const Shape& shape);

 private:
  Prg self_;
  Prg peer_;
};

// Party-local state for one protocol run.
//
// A planning context has no channel: exchanges return zeros, PRZS returns
// zeros and randomness comes from whatever source it was given (usually a
// RecordingSource). Running a protocol against it yields the exact sequence
// of dealer requests the online run will make.
class ProtocolCtx {
 public:
  ProtocolCtx(Channel& channel, RandomnessSource& source, const PrzsSeedPair& seeds,
              FixedPointConfig fp = {}, DealerClient* dealer = nullptr);
  static ProtocolCtx planning(PartyId party, RandomnessSource& source, FixedPointConfig fp = {});

  PartyId party() const { return party_; }
  bool is_p0() const { return party_ == PartyId::kP0; }
  bool planning() const { return channel_ == nullptr; }
  const FixedPointConfig& fp() const { return fp_; }
  int frac_bits() const { return fp_.frac_bits; }
  Channel* channel() { return channel_; }

  CorrelatedShare take(const RandRequest& r) { return source_->take(r); }
  RandomnessSource& source() { return *source_; }
  RingTensor zero_share(const Shape& shape);

  // One symmetric phase carrying all tensors; returns the peer's tensors,
  // which have the same shapes.
  std::vector<RingTensor> exchange(std::string_view tag, std::span<const RingTensor> mine);
  RingTensor exchange(std::string_view tag, const RingTensor& mine);
  void send(std::string_view tag, const RingTensor& t);
  RingTensor recv(std::string_view tag, const Shape& shape);

  // Party-to-party transcript with dealer traffic folded in.
  Transcript transcript() const;

 private:
  ProtocolCtx(PartyId party, RandomnessSource& source, FixedPointConfig fp);

  PartyId party_;
  Channel* channel_ = nullptr;
  RandomnessSource* source_;
  FixedPointConfig fp_;
  std::optional<Przs> przs_;
  DealerClient* dealer_ = nullptr;
};

}  // namespace mpcnn
