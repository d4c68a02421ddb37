#include "mpcnn/transport.hpp"

#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <sstream>

namespace mpcnn {

const char* party_name(PartyId p) {
  switch (p) {
    case PartyId::kP0: return "p0";
    case PartyId::kP1: return "p1";
    case PartyId::kDealer: return "dealer";
  }
  return "?";
}

PartyId parse_party(std::string_view s) {
  if (s == "p0" || s == "P0") return PartyId::kP0;
  if (s == "p1" || s == "P1") return PartyId::kP1;
  if (s == "dealer") return PartyId::kDealer;
  throw std::invalid_argument("unknown party role: " + std::string(s));
}

PartyId peer_of(PartyId p) {
  if (p == PartyId::kP0) return PartyId::kP1;
  if (p == PartyId::kP1) return PartyId::kP0;
  throw std::invalid_argument("dealer has no peer party");
}

std::uint32_t tag_hash(std::string_view tag) {
  std::uint32_t h = 2166136261u;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

std::array<std::uint8_t, kFrameHeaderBytes> encode_header(const Frame& f) {
  if (f.payload.size() > 0xffffffffu) throw TransportError(TransportError::Kind::kProtocol, "frame too large");
  std::array<std::uint8_t, kFrameHeaderBytes> h{};
  const auto len = static_cast<std::uint32_t>(f.payload.size());
  std::memcpy(h.data(), &f.session, 8);
  std::memcpy(h.data() + 8, &f.seq, 8);
  std::memcpy(h.data() + 16, &f.tag, 4);
  std::memcpy(h.data() + 20, &len, 4);
  return h;
}

std::uint32_t decode_header(std::span<const std::uint8_t, kFrameHeaderBytes> h, Frame& f) {
  std::uint32_t len;
  std::memcpy(&f.session, h.data(), 8);
  std::memcpy(&f.seq, h.data() + 8, 8);
  std::memcpy(&f.tag, h.data() + 16, 4);
  std::memcpy(&len, h.data() + 20, 4);
  return len;
}

std::chrono::milliseconds default_timeout() {
  if (const char* env = std::getenv("MPCNN_TIMEOUT_MS")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end != env && v > 0) return std::chrono::milliseconds(v);
  }
  return std::chrono::milliseconds(120000);
}

namespace {

struct InprocState {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Frame> queue[2];
  bool closed = false;
};

class InprocLink final : public Link {
 public:
  InprocLink(std::shared_ptr<InprocState> s, int side) : s_(std::move(s)), side_(side) {}
  ~InprocLink() override { close(); }

  void write(const Frame& f) override {
    {
      std::lock_guard lk(s_->mu);
      if (s_->closed) throw TransportError(TransportError::Kind::kDisconnected, "in-process link closed");
      s_->queue[1 - side_].push_back(f);
    }
    s_->cv.notify_all();
  }

  Frame read(std::chrono::milliseconds timeout) override {
    std::unique_lock lk(s_->mu);
    auto& q = s_->queue[side_];
    if (!s_->cv.wait_for(lk, timeout, [&] { return !q.empty() || s_->closed; }))
      throw TransportError(TransportError::Kind::kTimeout, "in-process read timed out");
    if (q.empty()) throw TransportError(TransportError::Kind::kDisconnected, "peer disconnected");
    Frame f = std::move(q.front());
    q.pop_front();
    return f;
  }

  void close() override {
    {
      std::lock_guard lk(s_->mu);
      s_->closed = true;
    }
    s_->cv.notify_all();
  }

 private:
  std::shared_ptr<InprocState> s_;
  int side_;
};

}  // namespace

std::pair<std::unique_ptr<Link>, std::unique_ptr<Link>> make_inproc_link_pair() {
  auto s = std::make_shared<InprocState>();
  return {std::make_unique<InprocLink>(s, 0), std::make_unique<InprocLink>(s, 1)};
}

bool Transcript::same_counts(const Transcript& o) const {
  return session == o.session && bytes_sent == o.bytes_sent && bytes_received == o.bytes_received &&
         header_bytes == o.header_bytes && rounds == o.rounds && messages_sent == o.messages_sent &&
         messages_received == o.messages_received && dealer_bytes_sent == o.dealer_bytes_sent &&
         dealer_bytes_received == o.dealer_bytes_received && dealer_requests == o.dealer_requests &&
         tags == o.tags;
}

std::string transcript_json_line(const Transcript& t) {
  std::ostringstream os;
  os << "{\"session\":" << t.session << ",\"bytes\":" << t.bytes() << ",\"rounds\":" << t.rounds
     << ",\"wall_ms\":" << t.wall_ms() << "}";
  return os.str();
}

Channel::Channel(std::uint64_t session, PartyId self, std::unique_ptr<Link> link,
                 std::chrono::milliseconds timeout)
    : session_(session), self_(self), link_(std::move(link)), timeout_(timeout),
      start_(std::chrono::steady_clock::now()) {
  t_.session = session;
}

Channel::~Channel() {
  if (link_) link_->close();
}

void Channel::begin_phase() {
  if (phase_depth_++ == 0) phase_flow_ = false;
}

void Channel::end_phase() {
  if (--phase_depth_ == 0 && phase_flow_) {
    std::lock_guard lk(mu_);
    ++t_.rounds;
  }
}

void Channel::write_frame(std::string_view tag, std::span<const std::uint8_t> payload) {
  Frame f;
  f.session = session_;
  f.seq = send_seq_++;
  f.tag = tag_hash(tag);
  f.payload.assign(payload.begin(), payload.end());
  link_->write(f);
  if (!payload.empty()) phase_flow_ = true;
  std::lock_guard lk(mu_);
  t_.bytes_sent += payload.size();
  t_.header_bytes += kFrameHeaderBytes;
  ++t_.messages_sent;
  auto it = t_.tags.find(tag);
  if (it == t_.tags.end()) it = t_.tags.emplace(std::string(tag), TagStats{}).first;
  it->second.bytes_sent += payload.size();
  ++it->second.messages_sent;
}

Bytes Channel::read_frame(std::string_view tag) {
  Frame f = link_->read(timeout_);
  if (f.session != session_)
    throw TransportError(TransportError::Kind::kUnknownSession,
                         "frame for session " + std::to_string(f.session) + " on session " +
                             std::to_string(session_));
  if (f.seq != recv_seq_)
    throw TransportError(TransportError::Kind::kProtocol,
                         "out-of-order frame: seq " + std::to_string(f.seq) + ", expected " +
                             std::to_string(recv_seq_));
  ++recv_seq_;
  if (f.tag != tag_hash(tag))
    throw TransportError(TransportError::Kind::kProtocol,
                         "unexpected message while waiting for " + std::string(tag));
  if (!f.payload.empty()) phase_flow_ = true;
  std::lock_guard lk(mu_);
  t_.bytes_received += f.payload.size();
  t_.header_bytes += kFrameHeaderBytes;
  ++t_.messages_received;
  auto it = t_.tags.find(tag);
  if (it == t_.tags.end()) it = t_.tags.emplace(std::string(tag), TagStats{}).first;
  it->second.bytes_received += f.payload.size();
  ++it->second.messages_received;
  return std::move(f.payload);
}

void Channel::send(std::string_view tag, std::span<const std::uint8_t> payload) {
  Phase ph(*this);
  write_frame(tag, payload);
}

Bytes Channel::recv(std::string_view tag) {
  Phase ph(*this);
  return read_frame(tag);
}

Bytes Channel::exchange(std::string_view tag, std::span<const std::uint8_t> payload) {
  if (payload.empty()) return {};
  Phase ph(*this);
  write_frame(tag, payload);
  Bytes peer = read_frame(tag);
  if (peer.size() != payload.size())
    throw TransportError(TransportError::Kind::kLengthMismatch,
                         "exchange length mismatch on " + std::string(tag) + ": " +
                             std::to_string(payload.size()) + " vs " + std::to_string(peer.size()));
  return peer;
}

void Channel::add_dealer_traffic(std::uint64_t sent, std::uint64_t received) {
  std::lock_guard lk(mu_);
  t_.dealer_bytes_sent += sent;
  t_.dealer_bytes_received += received;
  ++t_.dealer_requests;
}

Transcript Channel::measure() const {
  std::lock_guard lk(mu_);
  Transcript t = t_;
  t.wall = std::chrono::steady_clock::now() - start_;
  return t;
}

void Channel::reset_clock() {
  std::lock_guard lk(mu_);
  start_ = std::chrono::steady_clock::now();
}

void Channel::close() {
  if (link_) link_->close();
}

}  // namespace mpcnn
