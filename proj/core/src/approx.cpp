#include "mpcnn/approx.hpp"

#include <charconv>
#include <stdexcept>
#include <string>

#include "kernels.hpp"
#include "ops.hpp"

namespace mpcnn {

namespace {

int parse_int(std::string_view key, std::string_view v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::invalid_argument("approx: " + std::string(key) + " expects an integer, got '" +
                                std::string(v) + "'");
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(std::string(v), &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("approx: " + std::string(key) + " expects a number, got '" +
                              std::string(v) + "'");
}

}  // namespace

void ApproxConfig::validate(const FixedPointConfig& fp) const {
  if (exp_iters < 1 || exp_iters > 20) throw std::invalid_argument("exp_iters must be in [1, 20]");
  if (newton_iters_recip < 1 || newton_iters_recip > 64)
    throw std::invalid_argument("newton_iters_recip must be in [1, 64]");
  if (newton_iters_rsqrt < 1 || newton_iters_rsqrt > 64)
    throw std::invalid_argument("newton_iters_rsqrt must be in [1, 64]");
  if (!(exp_domain.lo <= 0) || !(exp_domain.hi > exp_domain.lo) ||
      exp_domain.hi - exp_domain.lo > 32)
    throw std::invalid_argument("exp domain must contain 0 and span at most 32");
  if (exp_domain.lo * 4 != std::floor(exp_domain.lo * 4))
    throw std::invalid_argument("exp domain lower end must be a multiple of 1/4");
  const int f = fp.frac_bits;
  detail::domain_bits(recip_domain, f, "reciprocal");
  detail::domain_bits(rsqrt_domain, f, "rsqrt");
  detail::domain_bits(log_domain, f, "log");
}

void ApproxConfig::set(std::string_view key, std::string_view value) {
  if (key == "exp_iters") exp_iters = parse_int(key, value);
  else if (key == "newton_iters_recip") newton_iters_recip = parse_int(key, value);
  else if (key == "newton_iters_rsqrt") newton_iters_rsqrt = parse_int(key, value);
  else if (key == "exp_lo") exp_domain.lo = parse_double(key, value);
  else if (key == "exp_hi") exp_domain.hi = parse_double(key, value);
  else if (key == "recip_lo") recip_domain.lo = parse_double(key, value);
  else if (key == "recip_hi") recip_domain.hi = parse_double(key, value);
  else if (key == "rsqrt_lo") rsqrt_domain.lo = parse_double(key, value);
  else if (key == "rsqrt_hi") rsqrt_domain.hi = parse_double(key, value);
  else if (key == "log_lo") log_domain.lo = parse_double(key, value);
  else if (key == "log_hi") log_domain.hi = parse_double(key, value);
  else throw std::invalid_argument("approx: unknown key '" + std::string(key) + "'");
}

void ApproxConfig::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw std::invalid_argument("approx: expected key=value, got '" + std::string(assignment) +
                                "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

ArithShare sec_exp(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::exp(detail::SecureOps{ctx}, x, cfg);
}
ArithShare sec_reciprocal(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::reciprocal(detail::SecureOps{ctx}, x, cfg.newton_iters_recip, cfg.recip_domain);
}
ArithShare sec_rsqrt(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::rsqrt(detail::SecureOps{ctx}, x, cfg.newton_iters_rsqrt, cfg.rsqrt_domain);
}
ArithShare sec_sigmoid(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::sigmoid(detail::SecureOps{ctx}, x, cfg);
}
ArithShare sec_silu(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::silu(detail::SecureOps{ctx}, x, cfg);
}
ArithShare sec_elu(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::elu(detail::SecureOps{ctx}, x, cfg);
}
ArithShare sec_log(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::log(detail::SecureOps{ctx}, x, cfg);
}
ArithShare sec_max(ProtocolCtx& ctx, const ArithShare& x) {
  return detail::max_last_axis(detail::SecureOps{ctx}, x);
}
ArithShare sec_log_softmax(ProtocolCtx& ctx, const ArithShare& x, const ApproxConfig& cfg) {
  return detail::log_softmax(detail::SecureOps{ctx}, x, cfg);
}

namespace fxp {

RingTensor exp(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::exp(detail::PlainOps{fp}, x, cfg);
}
RingTensor reciprocal(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::reciprocal(detail::PlainOps{fp}, x, cfg.newton_iters_recip, cfg.recip_domain);
}
RingTensor rsqrt(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::rsqrt(detail::PlainOps{fp}, x, cfg.newton_iters_rsqrt, cfg.rsqrt_domain);
}
RingTensor sigmoid(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::sigmoid(detail::PlainOps{fp}, x, cfg);
}
RingTensor silu(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::silu(detail::PlainOps{fp}, x, cfg);
}
RingTensor elu(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::elu(detail::PlainOps{fp}, x, cfg);
}
RingTensor log(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::log(detail::PlainOps{fp}, x, cfg);
}
RingTensor relu(const RingTensor& x) { return detail::relu(detail::PlainOps{}, x); }
RingTensor max(const RingTensor& x) { return detail::max_last_axis(detail::PlainOps{}, x); }
RingTensor log_softmax(const RingTensor& x, const FixedPointConfig& fp, const ApproxConfig& cfg) {
  return detail::log_softmax(detail::PlainOps{fp}, x, cfg);
}

}  // namespace fxp

}  // namespace mpcnn
