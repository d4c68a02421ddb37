// End-to-end sessions for both workloads, inline vs pre-dealt randomness and
// in-process vs loopback TCP.

#include <benchmark/benchmark.h>

#include "mpcnn/harness.hpp"

using namespace mpcnn;

namespace {

void run(benchmark::State& state, ExperimentSpec spec, Workload w, std::size_t batch,
         std::size_t image) {
  const SessionSetup setup = prepare_session(spec, w, batch, image, spec.seed);
  Dealer dealer;
  SessionRecord last;
  std::uint64_t session = 1;
  for (auto _ : state) {
    last = run_session(spec, setup, dealer, session++);
    if (!last.audit_ok) state.SkipWithError("randomness audit failed");
  }
  state.counters["rounds"] = static_cast<double>(last.rounds);
  state.counters["MB"] = static_cast<double>(last.bytes) / 1e6;
  state.counters["dealer_MB"] = static_cast<double>(last.dealer_bytes) / 1e6;
  state.counters["ms_per_input"] = last.per_input_ms;
}

void BM_Drowsy(benchmark::State& state) {
  ExperimentSpec spec;
  spec.options.mode = state.range(1) ? RandMode::kPreDeal : RandMode::kInline;
  run(state, spec, Workload::kDrowsy, static_cast<std::size_t>(state.range(0)), 0);
}

void BM_DrowsyTcp(benchmark::State& state) {
  ExperimentSpec spec;
  spec.backend = Backend::kTcp;
  run(state, spec, Workload::kDrowsy, static_cast<std::size_t>(state.range(0)), 0);
}

void BM_Yolo(benchmark::State& state) {
  ExperimentSpec spec;
  spec.options.fold_bn = true;
  run(state, spec, Workload::kYolo, 1, static_cast<std::size_t>(state.range(0)));
}

}  // namespace

BENCHMARK(BM_Drowsy)->ArgsProduct({{1, 16, 64}, {0, 1}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_DrowsyTcp)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Yolo)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
