#pragma once

#include <string_view>

#include "mpcnn/ring.hpp"
#include "mpcnn/sharing.hpp"

namespace mpcnn {

struct Domain {
  double lo;
  double hi;
};

// Iteration counts and input domains of the nonlinear approximations.
//
// exp splits u = x - exp_domain.lo into a table-indexed part of 2^(-2)
// granularity and a remainder r in [0, 1/4); exp(r) uses a Taylor polynomial
// of degree exp_iters evaluated at four extra fractional bits.
struct ApproxConfig {
  int exp_iters = 8;
  int newton_iters_recip = 10;
  int newton_iters_rsqrt = 10;
  Domain exp_domain{-16.0, 8.0};
  Domain recip_domain{1.0 / 64, 4096.0};
  Domain rsqrt_domain{1.0 / 64, 1024.0};
  Domain log_domain{1.0 / 64, 64.0};

  void validate(const FixedPointConfig& fp = {}) const;
  // key=value as accepted by --approx.
  void set(std::string_view key, std::string_view value);
  void set(std::string_view assignment);
};

// Secure versions. Outside the documented domain the result is unspecified
// but bounded work is still performed (round counts never depend on data).
ArithShare sec_exp(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});
ArithShare sec_reciprocal(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});
ArithShare sec_rsqrt(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});
ArithShare sec_sigmoid(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});
ArithShare sec_silu(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});
ArithShare sec_elu(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});
ArithShare sec_log(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});
// Along the last axis.
ArithShare sec_max(ProtocolCtx& ctx, const ArithShare& x);
ArithShare sec_log_softmax(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg = {});

// Cleartext fixed-point twins: identical formulas, truncations and iteration
// counts, evaluated on plain ring tensors.
namespace fxp {
RingTensor exp(const RingTensor& x, const FixedPointConfig& fp = {}, const ApproxConfig& cfg = {});
RingTensor reciprocal(const RingTensor& x, const FixedPointConfig& fp = {},
                      const ApproxConfig& cfg = {});
RingTensor rsqrt(const RingTensor& x, const FixedPointConfig& fp = {}, const ApproxConfig& cfg = {});
RingTensor sigmoid(const RingTensor& x, const FixedPointConfig& fp = {},
                   const ApproxConfig& cfg = {});
RingTensor silu(const RingTensor& x, const FixedPointConfig& fp = {}, const ApproxConfig& cfg = {});
RingTensor elu(const RingTensor& x, const FixedPointConfig& fp = {}, const ApproxConfig& cfg = {});
RingTensor log(const RingTensor& x, const FixedPointConfig& fp = {}, const ApproxConfig& cfg = {});
RingTensor relu(const RingTensor& x);
RingTensor max(const RingTensor& x);
RingTensor log_softmax(const RingTensor& x, const FixedPointConfig& fp = {},
                       const ApproxConfig& cfg = {});
}  // namespace fxp

}  // namespace mpcnn
