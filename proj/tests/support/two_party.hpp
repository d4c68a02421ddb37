#pragma once

// Runs the same body as P0 and P1 on two threads over an in-process link,
// with an in-process dealer serving inline randomness.

#include <exception>
#include <functional>
#include <future>
#include <thread>
#include <utility>

#include "mpcnn/dealer.hpp"
#include "mpcnn/protocol_ctx.hpp"
#include "mpcnn/sharing.hpp"
#include "mpcnn/transport.hpp"

namespace mpcnn::test {

struct PartyRun {
  std::uint64_t session = 1;
  FixedPointConfig fp{};
};

template <class F>
auto run_two_party(F body, Dealer& dealer, PartyRun opt = {}) {
  using R = std::invoke_result_t<F&, ProtocolCtx&>;
  auto [l0, l1] = make_inproc_link_pair();
  auto run = [&](PartyId p, std::unique_ptr<Link> link) -> std::pair<R, Transcript> {
    Channel ch(opt.session, p, std::move(link));
    InprocDealerClient dc(dealer, opt.session, p);
    InlineSource src(dc);
    const PrzsSeedPair seeds = przs_setup(ch);
    ProtocolCtx ctx(ch, src, seeds, opt.fp, &dc);
    R r = body(ctx);
    return {std::move(r), ctx.transcript()};
  };
  auto f1 = std::async(std::launch::async, run, PartyId::kP1, std::move(l1));
  std::pair<R, Transcript> r0;
  std::exception_ptr e0;
  try {
    r0 = run(PartyId::kP0, std::move(l0));
  } catch (...) {
    e0 = std::current_exception();
  }
  auto r1 = f1.get();
  if (e0) std::rethrow_exception(e0);
  return std::make_pair(std::move(r0), std::move(r1));
}

template <class F>
auto run_two_party(F body, PartyRun opt = {}) {
  Dealer dealer;
  return run_two_party(std::move(body), dealer, opt);
}

// Secret-share a public test value from P0 and return the opened result of f.
template <class F>
RingTensor open_after(const RingTensor& x, F f, PartyRun opt = {},
                      Transcript* t0 = nullptr) {
  auto [a, b] = run_two_party(
      [&](ProtocolCtx& ctx) {
        const ArithShare s = share_input(ctx, PartyId::kP0, ctx.is_p0() ? &x : nullptr, x.shape());
        const ArithShare y = f(ctx, s);
        return *reveal(ctx, y, RevealTo::kBoth);
      },
      opt);
  if (t0) *t0 = a.second;
  return a.first;
}

}  // namespace mpcnn::test
