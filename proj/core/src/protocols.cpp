#include "mpcnn/protocols.hpp"

#include <time.h>

#include <future>
#include <map>
#include <mutex>

#include "bytes.hpp"
#include "mpcnn/errors.hpp"
#include "mpcnn/protocol_ctx.hpp"
#include "mpcnn/sharing.hpp"

namespace mpcnn {

namespace {

// Checks every take against the planned budget, in order.
class AuditingSource final : public RandomnessSource {
 public:
  AuditingSource(RandomnessSource& inner, const std::vector<RandRequest>& plan)
      : inner_(inner), plan_(plan) {}

  CorrelatedShare take(const RandRequest& r) override {
    if (consumed_ >= plan_.size() || !(plan_[consumed_] == r)) ++mismatches_;
    ++consumed_;
    return inner_.take(r);
  }
  std::size_t remaining() const override { return inner_.remaining(); }
  std::size_t consumed() const { return consumed_; }
  std::size_t mismatches() const { return mismatches_; }

 private:
  RandomnessSource& inner_;
  const std::vector<RandRequest>& plan_;
  std::size_t consumed_ = 0;
  std::size_t mismatches_ = 0;
};

std::mutex g_plan_mu;
std::map<std::string, std::shared_ptr<const std::vector<RandRequest>>> g_plans;

std::string plan_key(const SessionPlan& p) {
  detail::ByteWriter w;
  w.put<std::uint8_t>(static_cast<std::uint8_t>(p.workload));
  w.put<std::uint64_t>(p.graph.fingerprint());
  w.put<std::uint64_t>(p.batch);
  w.put<std::int32_t>(p.opt.fp.frac_bits);
  const ApproxConfig& a = p.opt.approx;
  w.put<std::int32_t>(a.exp_iters);
  w.put<std::int32_t>(a.newton_iters_recip);
  w.put<std::int32_t>(a.newton_iters_rsqrt);
  for (const Domain& d : {a.exp_domain, a.recip_domain, a.rsqrt_domain, a.log_domain}) {
    w.put<double>(d.lo);
    w.put<double>(d.hi);
  }
  w.put<std::uint8_t>(p.opt.secure_logsoftmax ? 1 : 0);
  const Bytes b = w.take();
  return std::string(b.begin(), b.end());
}

// The protocol body shared by the planning pass and the real run.
ArithShare forward_body(ProtocolCtx& ctx, const SessionPlan& plan, const RingTensor* input,
                        const WeightSet* weights, ForwardTrace* trace) {
  const ArithShare x = share_input(ctx, PartyId::kP0, input, plan.input_shape());
  const SharedWeights sw = share_weights(ctx, plan.graph, weights);
  ArithShare y = secure_forward(ctx, plan.graph, sw, x, plan.opt.approx, trace);
  if (plan.workload == Workload::kDrowsy && plan.opt.secure_logsoftmax)
    y = sec_log_softmax(ctx, y, plan.opt.approx);
  return y;
}

}  // namespace

const char* workload_name(Workload w) { return w == Workload::kDrowsy ? "drowsy" : "yolo"; }

Workload parse_workload(std::string_view s) {
  if (s == "drowsy") return Workload::kDrowsy;
  if (s == "yolo") return Workload::kYolo;
  throw std::invalid_argument("unknown workload '" + std::string(s) + "'");
}

const char* rand_mode_name(RandMode m) { return m == RandMode::kInline ? "inline" : "pre-deal"; }

Shape SessionPlan::input_shape() const {
  Shape s{batch};
  s.insert(s.end(), graph.input.begin(), graph.input.end());
  return s;
}

Bytes SessionPlan::context() const {
  const std::string k = plan_key(*this);
  detail::ByteWriter w;
  w.put_string(k);
  w.put<std::uint64_t>(budget ? budget->size() : 0);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(opt.mode));
  return w.take();
}

SessionPlan make_plan(Workload w, const ModelGraph& graph, std::size_t batch,
                      const ProtocolOptions& opt) {
  if (batch == 0) throw std::invalid_argument("batch must be positive");
  opt.approx.validate(opt.fp);
  SessionPlan p;
  p.workload = w;
  p.source = graph;
  p.graph = opt.fold_bn ? folded_structure(graph) : graph;
  p.batch = batch;
  p.opt = opt;
  p.graph.infer_shapes(batch);
  const std::string key = plan_key(p);
  std::lock_guard lk(g_plan_mu);
  if (auto it = g_plans.find(key); it != g_plans.end()) {
    p.budget = it->second;
    return p;
  }
  RecordingSource rec;
  ProtocolCtx ctx = ProtocolCtx::planning(PartyId::kP0, rec, opt.fp);
  const RingTensor zero(p.input_shape());
  forward_body(ctx, p, &zero, nullptr, nullptr);
  auto budget = std::make_shared<const std::vector<RandRequest>>(rec.release());
  g_plans.emplace(key, budget);
  p.budget = std::move(budget);
  return p;
}

std::size_t plan_cache_size() {
  std::lock_guard lk(g_plan_mu);
  return g_plans.size();
}

bool BudgetAudit::ok(RandMode mode) const {
  if (consumed != planned || mismatches != 0 || leftover != 0) return false;
  return mode == RandMode::kInline || dealer_requests <= 1;
}

Transcript PartyOutcome::output_phase() const {
  Transcript d;
  const Transcript& a = before_output;
  const Transcript& b = transcript;
  d.session = b.session;
  d.bytes_sent = b.bytes_sent - a.bytes_sent;
  d.bytes_received = b.bytes_received - a.bytes_received;
  d.header_bytes = b.header_bytes - a.header_bytes;
  d.rounds = b.rounds - a.rounds;
  d.messages_sent = b.messages_sent - a.messages_sent;
  d.messages_received = b.messages_received - a.messages_received;
  d.wall = b.wall - a.wall;
  for (const auto& [tag, s] : b.tags) {
    TagStats prev;
    if (auto it = a.tags.find(tag); it != a.tags.end()) prev = it->second;
    TagStats x{s.bytes_sent - prev.bytes_sent, s.bytes_received - prev.bytes_received,
               s.messages_sent - prev.messages_sent, s.messages_received - prev.messages_received};
    if (x != TagStats{}) d.tags.emplace(tag, x);
  }
  return d;
}

std::vector<int> argmax_rows(const RingTensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) == 0) throw ShapeError("argmax_rows expects N x K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (as_signed(logits[i * k + j]) > as_signed(logits[i * k + best])) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

namespace {

double thread_cpu_ms() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) * 1e3 + static_cast<double>(ts.tv_nsec) / 1e6;
}

}  // namespace

PartyOutcome run_party(Channel& ch, DealerClient& dealer, const SessionPlan& plan,
                       const PartyInputs& in) {
  if (!plan.budget) throw std::invalid_argument("run_party: plan has no budget");
  const auto start = std::chrono::steady_clock::now();
  const double cpu_start = thread_cpu_ms();
  PartyOutcome out;
  out.party = ch.self();
  ch.reset_clock();

  const WeightSet* weights = in.weights;
  std::optional<WeightSet> folded;
  if (out.party == PartyId::kP1) {
    if (!weights) throw std::invalid_argument("P1 must hold the model weights");
    if (plan.opt.fold_bn) {
      folded = fold_batchnorm(plan.source, *weights, plan.opt.fp).second;
      weights = &*folded;
    }
    check_weights(plan.graph, *weights);
  } else {
    weights = nullptr;
    if (!in.input) throw std::invalid_argument("P0 must hold the input");
    if (in.input->shape() != plan.input_shape())
      throw ShapeError("input shape " + shape_str(in.input->shape()) + " does not match plan " +
                       shape_str(plan.input_shape()));
  }

  const Bytes context = plan.context();
  const PrzsSeedPair seeds = przs_setup(ch, context);

  std::unique_ptr<RandomnessSource> base;
  if (plan.opt.mode == RandMode::kPreDeal) {
    auto pd = std::make_unique<PreDealtSource>();
    pd->load(dealer, *plan.budget);
    base = std::move(pd);
  } else {
    base = std::make_unique<InlineSource>(dealer);
  }
  AuditingSource source(*base, *plan.budget);
  const auto online_start = std::chrono::steady_clock::now();
  ProtocolCtx ctx(ch, source, seeds, plan.opt.fp, &dealer);

  const ArithShare y =
      forward_body(ctx, plan, out.party == PartyId::kP0 ? in.input : nullptr, weights, &out.trace);

  out.before_output = ctx.transcript();
  std::optional<RingTensor> opened = reveal(ctx, y, RevealTo::kP0, kTagOutput);
  out.transcript = ctx.transcript();
  if (out.party == PartyId::kP0) {
    out.output = std::move(opened);
    if (plan.workload == Workload::kDrowsy) out.classes = argmax_rows(*out.output);
  }

  out.audit.planned = plan.budget->size();
  out.audit.consumed = source.consumed();
  out.audit.mismatches = source.mismatches();
  out.audit.leftover = source.remaining();
  out.audit.dealer_requests = dealer.stats().requests;
  const auto end = std::chrono::steady_clock::now();
  out.wall_ms = std::chrono::duration<double, std::milli>(end - start).count();
  out.online_ms = std::chrono::duration<double, std::milli>(end - online_start).count();
  out.cpu_ms = thread_cpu_ms() - cpu_start;
  return out;
}

namespace {

template <class F>
TwoPartyResult run_pair(F party) {
  auto f1 = std::async(std::launch::async, party, PartyId::kP1);
  TwoPartyResult r;
  std::exception_ptr e0;
  try {
    r.p0 = party(PartyId::kP0);
  } catch (...) {
    e0 = std::current_exception();
  }
  std::exception_ptr e1;
  try {
    r.p1 = f1.get();
  } catch (...) {
    e1 = std::current_exception();
  }
  if (e0) std::rethrow_exception(e0);
  if (e1) std::rethrow_exception(e1);
  return r;
}

}  // namespace

TwoPartyResult run_inproc(Dealer& dealer, std::uint64_t session, const SessionPlan& plan,
                          const RingTensor& input, const WeightSet& weights) {
  auto links = make_inproc_link_pair();
  std::unique_ptr<Link> l[2] = {std::move(links.first), std::move(links.second)};
  return run_pair([&](PartyId p) {
    const int i = p == PartyId::kP0 ? 0 : 1;
    Channel ch(session, p, std::move(l[i]));
    InprocDealerClient dc(dealer, session, p);
    PartyInputs in;
    if (p == PartyId::kP0) in.input = &input;
    else in.weights = &weights;
    try {
      PartyOutcome o = run_party(ch, dc, plan, in);
      ch.close();
      return o;
    } catch (...) {
      ch.close();  // unblock the peer
      throw;
    }
  });
}

DealerServer::DealerServer(Dealer& dealer, const Endpoint& ep) : dealer_(dealer), listener_(ep) {
  thread_ = std::thread([this] { loop(); });
}

DealerServer::~DealerServer() { stop(); }

void DealerServer::loop() {
  while (!stop_.load()) {
    std::shared_ptr<Link> link;
    try {
      link = listener_.accept(std::chrono::milliseconds(100));
    } catch (const TransportError& e) {
      if (e.kind() == TransportError::Kind::kTimeout) continue;
      return;
    } catch (...) {
      return;
    }
    std::lock_guard lk(mu_);
    links_.push_back(link);
    workers_.emplace_back([this, link] {
      try {
        serve_dealer_link(dealer_, *link);
      } catch (...) {
      }
      link->close();
      ++finished_;
    });
  }
}

void DealerServer::stop() {
  if (stop_.exchange(true)) return;
  if (thread_.joinable()) thread_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lk(mu_);
    for (auto& l : links_) l->close();
    workers.swap(workers_);
  }
  for (auto& t : workers)
    if (t.joinable()) t.join();
  listener_.close();
}

TwoPartyResult run_tcp_loopback(Dealer& dealer, std::uint64_t session, const SessionPlan& plan,
                                const RingTensor& input, const WeightSet& weights) {
  DealerServer server(dealer, {"127.0.0.1", 0});
  TcpListener p1_listener({"127.0.0.1", 0});
  const Endpoint p1_ep{"127.0.0.1", p1_listener.port()};
  const auto timeout = default_timeout();
  return run_pair([&](PartyId p) {
    std::unique_ptr<Link> link =
        p == PartyId::kP1 ? p1_listener.accept(timeout) : tcp_connect(p1_ep, timeout);
    Channel ch(session, p, std::move(link));
    TcpDealerClient dc(tcp_connect(server.endpoint(), timeout), session, p);
    PartyInputs in;
    if (p == PartyId::kP0) in.input = &input;
    else in.weights = &weights;
    try {
      PartyOutcome o = run_party(ch, dc, plan, in);
      ch.close();
      return o;
    } catch (...) {
      ch.close();
      throw;
    }
  });
}

}  // namespace mpcnn
