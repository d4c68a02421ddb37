#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "mpcnn/prg.hpp"
#include "mpcnn/ring.hpp"
#include "mpcnn/transport.hpp"

namespace mpcnn {

inline constexpr const char* kTagTripleReq = "TRIPLE_REQ";
inline constexpr const char* kTagTripleRsp = "TRIPLE_RSP";
inline constexpr const char* kTagBitpairRsp = "BITPAIR_RSP";
inline constexpr const char* kTagDealerHello = "DEALER_HELLO";
inline constexpr const char* kTagDealerBye = "DEALER_BYE";

enum class RandKind : std::uint8_t {
  kArithTriple = 1,
  kBoolTriple = 2,
  kMatmulTriple = 3,
  kConvTriple = 4,
  kBitPairs = 5,
};

// What a consuming operation needs. The dealer is geometry aware: a conv
// request carries the input shape, kernel shape and stride/padding, and the
// product share comes out shaped like the conv output.
struct RandRequest {
  RandKind kind = RandKind::kArithTriple;
  Shape a;
  Shape b;
  ConvGeometry conv;
  std::uint64_t bits = 0;  // bit positions for kBitPairs

  static RandRequest arith(Shape shape);
  static RandRequest boolean(Shape shape);
  static RandRequest matmul(Shape x, Shape w);
  static RandRequest conv2d(Shape x, Shape w, ConvGeometry g);
  static RandRequest bitpairs(Shape shape, std::uint64_t bit_mask);

  bool operator==(const RandRequest&) const = default;
  std::string describe() const;
};

// One party's half of a correlated-randomness item.
//   arith/matmul/conv: a, b, c additive shares with c = a*b (ring product)
//   bool:              a, b, c XOR shares with c = a & b
//   bitpairs:          a = XOR share of r (one word per element),
//                      b = additive shares of the selected bits of r,
//                          laid out [popcount(bits), shape...]
struct CorrelatedShare {
  RandKind kind = RandKind::kArithTriple;
  RingTensor a, b, c;
};

struct CorrelatedShapes {
  Shape a, b, c;
};
CorrelatedShapes correlated_shapes(const RandRequest& r);
std::size_t correlated_words(const RandRequest& r);

// Trusted helper. Output for (session, index, party) is a deterministic
// function of the master key, so nothing needs to be cached between the two
// parties' fetches; the only per-session state is the replay counter and the
// digest of requests still waiting for the other party.
class Dealer {
 public:
  explicit Dealer(const Seed& master = random_seed());

  void register_session(std::uint64_t session);
  void end_session(std::uint64_t session);
  bool has_session(std::uint64_t session) const;
  std::size_t session_count() const;
  // Request digests waiting for the second party.
  std::size_t pending(std::uint64_t session) const;

  std::vector<CorrelatedShare> deal(std::uint64_t session, PartyId party,
                                    std::uint64_t first_index,
                                    std::span<const RandRequest> requests);

  // Wire entry point. Returns the TRIPLE_RSP and BITPAIR_RSP payloads.
  std::pair<Bytes, Bytes> handle(std::span<const std::uint8_t> request_payload);

 private:
  struct SessionState {
    std::uint64_t next_index[2] = {0, 0};
    std::map<std::uint64_t, std::pair<std::uint64_t, int>> waiting;  // index -> (digest, party)
  };

  CorrelatedShare generate(const Seed& session_key, std::uint64_t index, PartyId party,
                           const RandRequest& r) const;

  Seed master_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, SessionState> sessions_;
};

// Serves one party connection until it closes. Used by `mpcnn dealer`.
void serve_dealer_link(Dealer& dealer, Link& link);

Bytes encode_rand_requests(std::uint64_t session, PartyId party, std::uint64_t first_index,
                           std::span<const RandRequest> reqs);

struct DealerStats {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t requests = 0;
  std::uint64_t items = 0;
};

class DealerClient {
 public:
  DealerClient(std::uint64_t session, PartyId party) : session_(session), party_(party) {}
  virtual ~DealerClient() = default;

  std::vector<CorrelatedShare> fetch(std::span<const RandRequest> reqs);
  DealerStats stats() const;
  std::uint64_t session() const { return session_; }
  PartyId party() const { return party_; }

 protected:
  virtual std::pair<Bytes, Bytes> roundtrip(const Bytes& request) = 0;

 private:
  std::uint64_t session_;
  PartyId party_;
  std::uint64_t next_index_ = 0;
  mutable std::mutex mu_;
  DealerStats stats_;
};

// In-process client. Messages still go through the wire encoding so the
// dealer byte counts equal the TCP ones.
class InprocDealerClient final : public DealerClient {
 public:
  InprocDealerClient(Dealer& dealer, std::uint64_t session, PartyId party);

 protected:
  std::pair<Bytes, Bytes> roundtrip(const Bytes& request) override;

 private:
  Dealer& dealer_;
};

class TcpDealerClient final : public DealerClient {
 public:
  TcpDealerClient(std::unique_ptr<Link> link, std::uint64_t session, PartyId party);
  ~TcpDealerClient() override;

 protected:
  std::pair<Bytes, Bytes> roundtrip(const Bytes& request) override;

 private:
  std::unique_ptr<Link> link_;
  std::uint64_t seq_ = 0;
  std::uint64_t recv_seq_ = 0;
};

// Party-side supplier of correlated randomness for one session.
class RandomnessSource {
 public:
  virtual ~RandomnessSource() = default;
  virtual CorrelatedShare take(const RandRequest& r) = 0;
  virtual std::size_t remaining() const { return 0; }
};

// Fetches each item from the dealer when it is needed.
class InlineSource final : public RandomnessSource {
 public:
  explicit InlineSource(DealerClient& client) : client_(client) {}
  CorrelatedShare take(const RandRequest& r) override;

 private:
  DealerClient& client_;
};

// Holds a whole session budget fetched up front.
class PreDealtSource final : public RandomnessSource {
 public:
  PreDealtSource() = default;
  void load(DealerClient& client, std::span<const RandRequest> budget);
  CorrelatedShare take(const RandRequest& r) override;
  std::size_t remaining() const override { return queue_.size(); }

 private:
  std::deque<std::pair<RandRequest, CorrelatedShare>> queue_;
};

// Records requests and hands out zeros. Drives the symbolic planning pass.
class RecordingSource final : public RandomnessSource {
 public:
  CorrelatedShare take(const RandRequest& r) override;
  const std::vector<RandRequest>& requests() const { return requests_; }
  std::vector<RandRequest> release() { return std::move(requests_); }

 private:
  std::vector<RandRequest> requests_;
};

}  // namespace mpcnn
