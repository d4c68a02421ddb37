#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mpcnn/errors.hpp"

namespace mpcnn {

enum class PartyId : std::uint8_t { kP0 = 0, kP1 = 1, kDealer = 2 };

const char* party_name(PartyId p);
PartyId parse_party(std::string_view s);
PartyId peer_of(PartyId p);

using Bytes = std::vector<std::uint8_t>;

// Fixed wire header: session u64 | seq u64 | tag hash u32 | length u32, LE.
inline constexpr std::size_t kFrameHeaderBytes = 24;

std::uint32_t tag_hash(std::string_view tag);

struct Frame {
  std::uint64_t session = 0;
  std::uint64_t seq = 0;
  std::uint32_t tag = 0;
  Bytes payload;
};

std::array<std::uint8_t, kFrameHeaderBytes> encode_header(const Frame& f);
// Fills everything except the payload; returns the payload length.
std::uint32_t decode_header(std::span<const std::uint8_t, kFrameHeaderBytes> h, Frame& f);

std::chrono::milliseconds default_timeout();

// Raw, unaccounted frame pipe between two endpoints.
class Link {
 public:
  virtual ~Link() = default;
  virtual void write(const Frame& f) = 0;
  virtual Frame read(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;
};

std::pair<std::unique_ptr<Link>, std::unique_ptr<Link>> make_inproc_link_pair();

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};
Endpoint parse_endpoint(std::string_view addr);

class TcpListener {
 public:
  explicit TcpListener(const Endpoint& ep);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<Link> accept(std::chrono::milliseconds timeout);
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// Retries until the peer is listening or the timeout expires.
std::unique_ptr<Link> tcp_connect(const Endpoint& ep, std::chrono::milliseconds timeout);

struct TagStats {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
  bool operator==(const TagStats&) const = default;
};

// One party's view of one session. Byte counters are payload only; frame
// headers go to header_bytes. Dealer traffic is kept apart from the
// party-to-party counters.
struct Transcript {
  std::uint64_t session = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t header_bytes = 0;
  std::uint64_t rounds = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
  std::uint64_t dealer_bytes_sent = 0;
  std::uint64_t dealer_bytes_received = 0;
  std::uint64_t dealer_requests = 0;
  std::chrono::nanoseconds wall{0};
  std::map<std::string, TagStats, std::less<>> tags;

  std::uint64_t bytes() const { return bytes_sent + bytes_received; }
  double wall_ms() const { return std::chrono::duration<double, std::milli>(wall).count(); }
  // Equality of everything except wall time.
  bool same_counts(const Transcript& o) const;
};

std::string transcript_json_line(const Transcript& t);

// Session-scoped accounted channel between P0 and P1.
//
// A phase is a set of messages that may legally be in flight at once. Every
// phase in which this party sends or receives at least one payload byte adds
// one round. Plain send/recv/exchange calls outside an explicit phase are a
// phase of their own.
class Channel {
 public:
  Channel(std::uint64_t session, PartyId self, std::unique_ptr<Link> link,
          std::chrono::milliseconds timeout = default_timeout());
  ~Channel();
  Channel(const Channel&) = delete;
  Channel& operator=(const Channel&) = delete;

  std::uint64_t session() const { return session_; }
  PartyId self() const { return self_; }

  void send(std::string_view tag, std::span<const std::uint8_t> payload);
  Bytes recv(std::string_view tag);
  // Symmetric exchange. Both sides must pass payloads of equal length.
  // Empty payloads skip the wire entirely.
  Bytes exchange(std::string_view tag, std::span<const std::uint8_t> payload);

  class Phase {
   public:
    explicit Phase(Channel& ch) : ch_(&ch) { ch_->begin_phase(); }
    ~Phase() {
      if (ch_) ch_->end_phase();
    }
    Phase(const Phase&) = delete;
    Phase& operator=(const Phase&) = delete;

   private:
    Channel* ch_;
  };
  Phase phase() { return Phase(*this); }

  void add_dealer_traffic(std::uint64_t sent, std::uint64_t received);
  Transcript measure() const;
  void reset_clock();
  void close();

 private:
  void begin_phase();
  void end_phase();
  void write_frame(std::string_view tag, std::span<const std::uint8_t> payload);
  Bytes read_frame(std::string_view tag);

  std::uint64_t session_;
  PartyId self_;
  std::unique_ptr<Link> link_;
  std::chrono::milliseconds timeout_;
  std::uint64_t send_seq_ = 0;
  std::uint64_t recv_seq_ = 0;
  int phase_depth_ = 0;
  bool phase_flow_ = false;
  std::chrono::steady_clock::time_point start_;
  mutable std::mutex mu_;
  Transcript t_;
};

}  // namespace mpcnn
