#include "mpcnn/dealer.hpp"

#include <bit>
#include <sstream>

#include "bytes.hpp"

namespace mpcnn {

using detail::ByteReader;
using detail::ByteWriter;

RandRequest RandRequest::arith(Shape shape) {
  RandRequest r;
  r.kind = RandKind::kArithTriple;
  r.a = std::move(shape);
  return r;
}

RandRequest RandRequest::boolean(Shape shape) {
  RandRequest r;
  r.kind = RandKind::kBoolTriple;
  r.a = std::move(shape);
  return r;
}

RandRequest RandRequest::matmul(Shape x, Shape w) {
  RandRequest r;
  r.kind = RandKind::kMatmulTriple;
  r.a = std::move(x);
  r.b = std::move(w);
  return r;
}

RandRequest RandRequest::conv2d(Shape x, Shape w, ConvGeometry g) {
  RandRequest r;
  r.kind = RandKind::kConvTriple;
  r.a = std::move(x);
  r.b = std::move(w);
  r.conv = g;
  return r;
}

RandRequest RandRequest::bitpairs(Shape shape, std::uint64_t bit_mask) {
  RandRequest r;
  r.kind = RandKind::kBitPairs;
  r.a = std::move(shape);
  r.bits = bit_mask;
  return r;
}

std::string RandRequest::describe() const {
  std::ostringstream os;
  switch (kind) {
    case RandKind::kArithTriple: os << "arith" << shape_str(a); break;
    case RandKind::kBoolTriple: os << "bool" << shape_str(a); break;
    case RandKind::kMatmulTriple: os << "matmul" << shape_str(a) << shape_str(b); break;
    case RandKind::kConvTriple:
      os << "conv" << shape_str(a) << shape_str(b) << " s" << conv.stride_h << "," << conv.stride_w
         << " p" << conv.pad_h << "," << conv.pad_w;
      break;
    case RandKind::kBitPairs: os << "bitpairs" << shape_str(a) << " mask=" << std::hex << bits; break;
  }
  return os.str();
}

CorrelatedShapes correlated_shapes(const RandRequest& r) {
  switch (r.kind) {
    case RandKind::kArithTriple:
    case RandKind::kBoolTriple:
      return {r.a, r.a, r.a};
    case RandKind::kMatmulTriple:
      if (r.a.size() != 2 || r.b.size() != 2 || r.a[1] != r.b[0])
        throw ShapeError("matmul triple: incompatible shapes " + shape_str(r.a) + shape_str(r.b));
      return {r.a, r.b, {r.a[0], r.b[1]}};
    case RandKind::kConvTriple:
      return {r.a, r.b, conv_output_shape(r.a, r.b, r.conv)};
    case RandKind::kBitPairs: {
      Shape b{static_cast<std::size_t>(std::popcount(r.bits))};
      b.insert(b.end(), r.a.begin(), r.a.end());
      return {r.a, b, {0}};
    }
  }
  throw std::invalid_argument("unknown randomness kind");
}

std::size_t correlated_words(const RandRequest& r) {
  const auto s = correlated_shapes(r);
  return numel(s.a) + numel(s.b) + numel(s.c);
}

namespace {

void put_request(ByteWriter& w, const RandRequest& r) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(r.kind));
  w.put_shape(r.a);
  w.put_shape(r.b);
  w.put<std::uint64_t>(r.conv.stride_h);
  w.put<std::uint64_t>(r.conv.stride_w);
  w.put<std::uint64_t>(r.conv.pad_h);
  w.put<std::uint64_t>(r.conv.pad_w);
  w.put<std::uint64_t>(r.bits);
}

RandRequest get_request(ByteReader& rd) {
  RandRequest r;
  const auto k = rd.get<std::uint8_t>();
  if (k < 1 || k > 5) throw FormatError("bad randomness kind");
  r.kind = static_cast<RandKind>(k);
  r.a = rd.get_shape();
  r.b = rd.get_shape();
  r.conv.stride_h = rd.get<std::uint64_t>();
  r.conv.stride_w = rd.get<std::uint64_t>();
  r.conv.pad_h = rd.get<std::uint64_t>();
  r.conv.pad_w = rd.get<std::uint64_t>();
  r.bits = rd.get<std::uint64_t>();
  return r;
}

std::uint64_t digest(const RandRequest& r) {
  ByteWriter w;
  put_request(w, r);
  std::uint64_t h = 14695981039346656037ull;
  for (auto c : w.bytes()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

RingTensor xor_t(const RingTensor& a, const RingTensor& b) { return ring_xor(a, b); }

}  // namespace

Bytes encode_rand_requests(std::uint64_t session, PartyId party, std::uint64_t first_index,
                           std::span<const RandRequest> reqs) {
  ByteWriter w;
  w.put<std::uint64_t>(session);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(party));
  w.put<std::uint64_t>(first_index);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(reqs.size()));
  for (const auto& r : reqs) put_request(w, r);
  return w.take();
}

Dealer::Dealer(const Seed& master) : master_(master) {}

void Dealer::register_session(std::uint64_t session) {
  std::lock_guard lk(mu_);
  sessions_.try_emplace(session);
}

void Dealer::end_session(std::uint64_t session) {
  std::lock_guard lk(mu_);
  sessions_.erase(session);
}

bool Dealer::has_session(std::uint64_t session) const {
  std::lock_guard lk(mu_);
  return sessions_.count(session) != 0;
}

std::size_t Dealer::session_count() const {
  std::lock_guard lk(mu_);
  return sessions_.size();
}

std::size_t Dealer::pending(std::uint64_t session) const {
  std::lock_guard lk(mu_);
  auto it = sessions_.find(session);
  return it == sessions_.end() ? 0 : it->second.waiting.size();
}

CorrelatedShare Dealer::generate(const Seed& session_key, std::uint64_t index, PartyId party,
                                 const RandRequest& r) const {
  const Seed k = derive_seed(session_key, index);
  Prg g0(k, 0);
  const CorrelatedShapes s = correlated_shapes(r);
  CorrelatedShare out;
  out.kind = r.kind;

  if (r.kind == RandKind::kBitPairs) {
    out.c = RingTensor(Shape{0});
    out.a = g0.tensor(s.a);
    out.b = g0.tensor(s.b);
    if (party == PartyId::kP0) return out;
    Prg g1(k, 1);
    const RingTensor r1 = g1.tensor(s.a);
    const RingTensor full = ring_xor(out.a, r1);
    const std::size_t n = full.size();
    RingTensor b1(s.b);
    std::size_t slot = 0;
    for (int bit = 0; bit < 64; ++bit) {
      if (!((r.bits >> bit) & 1)) continue;
      for (std::size_t e = 0; e < n; ++e)
        b1[slot * n + e] = ((full[e] >> bit) & 1) - out.b[slot * n + e];
      ++slot;
    }
    out.a = r1;
    out.b = std::move(b1);
    return out;
  }

  out.a = g0.tensor(s.a);
  out.b = g0.tensor(s.b);
  out.c = g0.tensor(s.c);
  if (party == PartyId::kP0) return out;

  Prg g1(k, 1);
  RingTensor a1 = g1.tensor(s.a);
  RingTensor b1 = g1.tensor(s.b);
  RingTensor c;
  switch (r.kind) {
    case RandKind::kArithTriple:
      c = ring_mul(ring_add(out.a, a1), ring_add(out.b, b1));
      break;
    case RandKind::kMatmulTriple:
      c = ring_matmul(ring_add(out.a, a1), ring_add(out.b, b1));
      break;
    case RandKind::kConvTriple:
      c = ring_conv2d(ring_add(out.a, a1), ring_add(out.b, b1), r.conv);
      break;
    case RandKind::kBoolTriple:
      c = ring_and(xor_t(out.a, a1), xor_t(out.b, b1));
      out.c = ring_xor(c, out.c);
      out.a = std::move(a1);
      out.b = std::move(b1);
      return out;
    default:
      break;
  }
  out.c = ring_sub(c, out.c);
  out.a = std::move(a1);
  out.b = std::move(b1);
  return out;
}

std::vector<CorrelatedShare> Dealer::deal(std::uint64_t session, PartyId party,
                                          std::uint64_t first_index,
                                          std::span<const RandRequest> requests) {
  if (party != PartyId::kP0 && party != PartyId::kP1)
    throw RandomnessError(RandomnessError::Kind::kMismatch, "dealer serves P0 and P1 only");
  const int p = static_cast<int>(party);
  {
    std::lock_guard lk(mu_);
    auto it = sessions_.find(session);
    if (it == sessions_.end())
      throw RandomnessError(RandomnessError::Kind::kUnknownSession,
                            "dealer: unknown session " + std::to_string(session));
    SessionState& st = it->second;
    if (first_index != st.next_index[p])
      throw RandomnessError(RandomnessError::Kind::kReplay,
                            "dealer: request index " + std::to_string(first_index) + " from " +
                                party_name(party) + ", expected " +
                                std::to_string(st.next_index[p]));
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const std::uint64_t idx = first_index + i;
      const std::uint64_t d = digest(requests[i]);
      auto w = st.waiting.find(idx);
      if (w == st.waiting.end()) {
        st.waiting.emplace(idx, std::make_pair(d, p));
      } else {
        if (w->second.second == p || w->second.first != d)
          throw RandomnessError(RandomnessError::Kind::kMismatch,
                                "dealer: parties disagree on request " + std::to_string(idx) +
                                    " (" + requests[i].describe() + ")");
        st.waiting.erase(w);
      }
    }
    st.next_index[p] += requests.size();
  }
  const Seed key = derive_seed(master_, session);
  std::vector<CorrelatedShare> out;
  out.reserve(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i)
    out.push_back(generate(key, first_index + i, party, requests[i]));
  return out;
}

std::pair<Bytes, Bytes> Dealer::handle(std::span<const std::uint8_t> payload) {
  ByteReader rd(payload);
  const auto session = rd.get<std::uint64_t>();
  const auto party = static_cast<PartyId>(rd.get<std::uint8_t>());
  const auto first = rd.get<std::uint64_t>();
  const auto count = rd.get<std::uint32_t>();
  std::vector<RandRequest> reqs;
  reqs.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) reqs.push_back(get_request(rd));
  if (!rd.done()) throw FormatError("trailing bytes in dealer request");
  const auto shares = deal(session, party, first, reqs);
  ByteWriter triples, pairs;
  for (const auto& s : shares) {
    ByteWriter& w = s.kind == RandKind::kBitPairs ? pairs : triples;
    w.put_words(s.a.data());
    w.put_words(s.b.data());
    w.put_words(s.c.data());
  }
  return {triples.take(), pairs.take()};
}

void serve_dealer_link(Dealer& dealer, Link& link) {
  std::uint64_t seq = 0;
  std::uint64_t session = 0;
  bool registered = false;
  const auto write = [&](std::string_view tag, Bytes payload) {
    Frame f;
    f.session = session;
    f.seq = seq++;
    f.tag = tag_hash(tag);
    f.payload = std::move(payload);
    link.write(f);
  };
  for (;;) {
    Frame f;
    try {
      f = link.read(std::chrono::hours(24));
    } catch (const TransportError&) {
      return;
    }
    session = f.session;
    if (f.tag == tag_hash(kTagDealerHello)) {
      dealer.register_session(f.session);
      registered = true;
    } else if (f.tag == tag_hash(kTagDealerBye)) {
      return;
    } else if (f.tag == tag_hash(kTagTripleReq)) {
      if (!registered) return;
      std::pair<Bytes, Bytes> rsp;
      try {
        rsp = dealer.handle(f.payload);
      } catch (const std::exception&) {
        return;  // the client sees the connection drop
      }
      auto& [t, b] = rsp;
      write(kTagTripleRsp, std::move(t));
      write(kTagBitpairRsp, std::move(b));
    } else {
      return;
    }
  }
}

std::vector<CorrelatedShare> DealerClient::fetch(std::span<const RandRequest> reqs) {
  if (reqs.empty()) return {};
  std::uint64_t first;
  {
    std::lock_guard lk(mu_);
    first = next_index_;
    next_index_ += reqs.size();
  }
  const Bytes request = encode_rand_requests(session_, party_, first, reqs);
  auto [triples, pairs] = roundtrip(request);
  ByteReader rt(triples), rp(pairs);
  std::vector<CorrelatedShare> out;
  out.reserve(reqs.size());
  for (const auto& r : reqs) {
    const CorrelatedShapes s = correlated_shapes(r);
    ByteReader& rd = r.kind == RandKind::kBitPairs ? rp : rt;
    CorrelatedShare cs;
    cs.kind = r.kind;
    cs.a = RingTensor(s.a);
    cs.b = RingTensor(s.b);
    cs.c = RingTensor(r.kind == RandKind::kBitPairs ? Shape{0} : s.c);
    rd.get_words(cs.a.data());
    rd.get_words(cs.b.data());
    rd.get_words(cs.c.data());
    out.push_back(std::move(cs));
  }
  if (!rt.done() || !rp.done()) throw FormatError("dealer response has trailing bytes");
  std::lock_guard lk(mu_);
  stats_.bytes_sent += request.size();
  stats_.bytes_received += triples.size() + pairs.size();
  ++stats_.requests;
  stats_.items += reqs.size();
  return out;
}

DealerStats DealerClient::stats() const {
  std::lock_guard lk(mu_);
  return stats_;
}

InprocDealerClient::InprocDealerClient(Dealer& dealer, std::uint64_t session, PartyId party)
    : DealerClient(session, party), dealer_(dealer) {
  dealer_.register_session(session);
}

std::pair<Bytes, Bytes> InprocDealerClient::roundtrip(const Bytes& request) {
  return dealer_.handle(request);
}

TcpDealerClient::TcpDealerClient(std::unique_ptr<Link> link, std::uint64_t session, PartyId party)
    : DealerClient(session, party), link_(std::move(link)) {
  Frame f;
  f.session = session;
  f.seq = seq_++;
  f.tag = tag_hash(kTagDealerHello);
  f.payload = {static_cast<std::uint8_t>(party)};
  link_->write(f);
}

TcpDealerClient::~TcpDealerClient() {
  try {
    Frame f;
    f.session = session();
    f.seq = seq_++;
    f.tag = tag_hash(kTagDealerBye);
    link_->write(f);
  } catch (...) {
  }
  link_->close();
}

std::pair<Bytes, Bytes> TcpDealerClient::roundtrip(const Bytes& request) {
  Frame f;
  f.session = session();
  f.seq = seq_++;
  f.tag = tag_hash(kTagTripleReq);
  f.payload = request;
  link_->write(f);
  const auto expect = [&](const char* tag) {
    Frame r = link_->read(default_timeout());
    if (r.tag != tag_hash(tag) || r.seq != recv_seq_++)
      throw TransportError(TransportError::Kind::kProtocol,
                           std::string("dealer: unexpected frame, wanted ") + tag);
    return std::move(r.payload);
  };
  Bytes t = expect(kTagTripleRsp);
  Bytes b = expect(kTagBitpairRsp);
  return {std::move(t), std::move(b)};
}

CorrelatedShare InlineSource::take(const RandRequest& r) {
  RandRequest one[1] = {r};
  return std::move(client_.fetch(one).front());
}

void PreDealtSource::load(DealerClient& client, std::span<const RandRequest> budget) {
  auto shares = client.fetch(budget);
  for (std::size_t i = 0; i < budget.size(); ++i)
    queue_.emplace_back(budget[i], std::move(shares[i]));
}

CorrelatedShare PreDealtSource::take(const RandRequest& r) {
  if (queue_.empty())
    throw RandomnessError(RandomnessError::Kind::kExhausted,
                          "pre-dealt randomness exhausted at " + r.describe());
  if (!(queue_.front().first == r))
    throw RandomnessError(RandomnessError::Kind::kMismatch,
                          "pre-dealt item " + queue_.front().first.describe() +
                              " does not match request " + r.describe());
  CorrelatedShare s = std::move(queue_.front().second);
  queue_.pop_front();
  return s;
}

CorrelatedShare RecordingSource::take(const RandRequest& r) {
  requests_.push_back(r);
  const CorrelatedShapes s = correlated_shapes(r);
  return {r.kind, RingTensor(s.a), RingTensor(s.b),
          RingTensor(r.kind == RandKind::kBitPairs ? Shape{0} : s.c)};
}

}  // namespace mpcnn
