#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mpcnn/approx.hpp"
#include "mpcnn/dealer.hpp"
#include "mpcnn/nn.hpp"
#include "mpcnn/transport.hpp"

namespace mpcnn {

inline constexpr const char* kTagOutput = "OUTPUT";

enum class Workload { kDrowsy, kYolo };
enum class RandMode { kInline, kPreDeal };

const char* workload_name(Workload w);
Workload parse_workload(std::string_view s);
const char* rand_mode_name(RandMode m);

struct ProtocolOptions {
  ApproxConfig approx;
  FixedPointConfig fp;
  RandMode mode = RandMode::kInline;
  bool secure_logsoftmax = false;  // drowsy only
  bool fold_bn = false;
};

// Public description of one session. Both parties derive it independently
// and check agreement during setup.
struct SessionPlan {
  Workload workload = Workload::kDrowsy;
  ModelGraph source;  // the graph P1's weights are laid out for
  ModelGraph graph;   // what actually runs (after the fold transform)
  std::size_t batch = 1;
  ProtocolOptions opt;
  std::shared_ptr<const std::vector<RandRequest>> budget;

  Shape input_shape() const;
  Bytes context() const;
};

// Builds (and caches) the plan. The randomness budget comes from a symbolic
// forward pass that records every dealer request without communicating.
SessionPlan make_plan(Workload w, const ModelGraph& graph, std::size_t batch,
                      const ProtocolOptions& opt);
std::size_t plan_cache_size();

struct BudgetAudit {
  std::size_t planned = 0;
  std::size_t consumed = 0;
  std::size_t leftover = 0;
  std::size_t mismatches = 0;
  std::uint64_t dealer_requests = 0;
  bool ok(RandMode mode) const;
};

struct PartyOutcome {
  PartyId party = PartyId::kP0;
  std::optional<RingTensor> output;  // P0 only
  std::vector<int> classes;          // P0, drowsy only
  Transcript transcript;
  Transcript before_output;  // snapshot taken right before the output phase
  BudgetAudit audit;
  ForwardTrace trace;
  double wall_ms = 0;
  double online_ms = 0;  // excludes pre-dealing
  double cpu_ms = 0;     // this party's thread

  // Counters of the output phase alone.
  Transcript output_phase() const;
};

struct PartyInputs {
  const RingTensor* input = nullptr;   // P0
  const WeightSet* weights = nullptr;  // P1, in the untransformed graph's layout
};

// Runs one party over an established channel. `dealer` supplies correlated
// randomness for this party and session.
PartyOutcome run_party(Channel& ch, DealerClient& dealer, const SessionPlan& plan,
                       const PartyInputs& in);

std::vector<int> argmax_rows(const RingTensor& logits);

struct TwoPartyResult {
  PartyOutcome p0;
  PartyOutcome p1;
};

// Both parties as threads in this process over an in-memory link.
TwoPartyResult run_inproc(Dealer& dealer, std::uint64_t session, const SessionPlan& plan,
                          const RingTensor& input, const WeightSet& weights);

// A dealer listening on TCP, one thread per party connection.
class DealerServer {
 public:
  DealerServer(Dealer& dealer, const Endpoint& ep);
  ~DealerServer();
  DealerServer(const DealerServer&) = delete;
  DealerServer& operator=(const DealerServer&) = delete;

  Endpoint endpoint() const { return {"127.0.0.1", port()}; }

  std::uint16_t port() const { return listener_.port(); }
  // Party connections served to completion so far.
  std::size_t finished() const { return finished_.load(); }
  void stop();

 private:
  void loop();

  Dealer& dealer_;
  TcpListener listener_;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> finished_{0};
  std::thread thread_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<std::shared_ptr<Link>> links_;
};

// Both parties and the dealer on loopback sockets.
TwoPartyResult run_tcp_loopback(Dealer& dealer, std::uint64_t session, const SessionPlan& plan,
                                const RingTensor& input, const WeightSet& weights);

}  // namespace mpcnn
