// Per-primitive cost over an in-process link. Every iteration is a full
// two-party session (seed setup, share, op, reveal), so small sizes are
// dominated by thread handoff; the rounds/bytes counters cover the op itself.

#include <benchmark/benchmark.h>

#include <random>

#include "mpcnn/approx.hpp"
#include "mpcnn/arith.hpp"
#include "two_party.hpp"

using namespace mpcnn;

namespace {

RingTensor random_fixed(std::size_t n, double lo, double hi) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> d(lo, hi);
  RingTensor t(Shape{n});
  for (auto& v : t.data()) v = encode(d(rng));
  return t;
}

template <class F>
void run_op(benchmark::State& state, double lo, double hi, F op) {
  const RingTensor x = random_fixed(static_cast<std::size_t>(state.range(0)), lo, hi);
  Transcript t;
  for (auto _ : state) {
    const RingTensor y = test::open_after(x, op, {}, &t);
    benchmark::DoNotOptimize(y.data().data());
  }
  // Seed setup and the final reveal are one round each.
  state.counters["rounds"] = static_cast<double>(t.rounds - 2);
  state.counters["bytes"] = static_cast<double>(t.bytes());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BeaverMul(benchmark::State& s) {
  run_op(s, -4, 4, [](ProtocolCtx& c, const ArithShare& x) { return mul_trunc(c, x, x); });
}
void BM_Relu(benchmark::State& s) {
  run_op(s, -4, 4, [](ProtocolCtx& c, const ArithShare& x) { return relu(c, x); });
}
void BM_Exp(benchmark::State& s) {
  run_op(s, -8, 4, [](ProtocolCtx& c, const ArithShare& x) { return sec_exp(c, x); });
}
void BM_Reciprocal(benchmark::State& s) {
  run_op(s, 0.5, 64, [](ProtocolCtx& c, const ArithShare& x) { return sec_reciprocal(c, x); });
}
void BM_Rsqrt(benchmark::State& s) {
  run_op(s, 0.5, 64, [](ProtocolCtx& c, const ArithShare& x) { return sec_rsqrt(c, x); });
}
void BM_Sigmoid(benchmark::State& s) {
  run_op(s, -6, 6, [](ProtocolCtx& c, const ArithShare& x) { return sec_sigmoid(c, x); });
}
void BM_Silu(benchmark::State& s) {
  run_op(s, -6, 6, [](ProtocolCtx& c, const ArithShare& x) { return sec_silu(c, x); });
}

void BM_MaxPool5(benchmark::State& state) {
  const std::size_t hw = static_cast<std::size_t>(state.range(0));
  const RingTensor x = random_fixed(4 * hw * hw, -4, 4).reshaped({1, 4, hw, hw});
  const PoolGeometry g{5, 1, 2};
  Transcript t;
  for (auto _ : state) {
    const RingTensor y = test::open_after(
        x, [&](ProtocolCtx& c, const ArithShare& s) { return maxpool2d(c, s, g); }, {}, &t);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.counters["rounds"] = static_cast<double>(t.rounds - 2);
  state.counters["bytes"] = static_cast<double>(t.bytes());
}

}  // namespace

BENCHMARK(BM_BeaverMul)->RangeMultiplier(8)->Range(64, 1 << 15)->UseRealTime();
BENCHMARK(BM_Relu)->RangeMultiplier(8)->Range(64, 1 << 15)->UseRealTime();
BENCHMARK(BM_Exp)->RangeMultiplier(8)->Range(64, 1 << 12)->UseRealTime();
BENCHMARK(BM_Reciprocal)->RangeMultiplier(8)->Range(64, 1 << 12)->UseRealTime();
BENCHMARK(BM_Rsqrt)->RangeMultiplier(8)->Range(64, 1 << 12)->UseRealTime();
BENCHMARK(BM_Sigmoid)->RangeMultiplier(8)->Range(64, 1 << 12)->UseRealTime();
BENCHMARK(BM_Silu)->RangeMultiplier(8)->Range(64, 1 << 12)->UseRealTime();
BENCHMARK(BM_MaxPool5)->Arg(8)->Arg(16)->Arg(32)->UseRealTime();

BENCHMARK_MAIN();
