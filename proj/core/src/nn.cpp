#include "mpcnn/nn.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "kernels.hpp"
#include "mpcnn/errors.hpp"
#include "mpcnn/protocol_ctx.hpp"
#include "mpcnn/tensor_io.hpp"
#include "ops.hpp"

namespace mpcnn {

using json = nlohmann::json;

namespace {

constexpr std::pair<LayerKind, const char*> kKindNames[] = {
    {LayerKind::kConv2D, "Conv2D"},   {LayerKind::kConvBNSiLU, "ConvBNSiLU"},
    {LayerKind::kBatchNorm, "BatchNorm"}, {LayerKind::kReLU, "ReLU"},
    {LayerKind::kELU, "ELU"},         {LayerKind::kC3, "C3"},
    {LayerKind::kSPPF, "SPPF"},       {LayerKind::kConcat, "Concat"},
    {LayerKind::kUpsample, "Upsample"}, {LayerKind::kGAP, "GAP"},
    {LayerKind::kFC, "FC"},           {LayerKind::kLogSoftmax, "LogSoftmax"},
    {LayerKind::kDetect, "Detect"},
};

std::uint64_t fnv64(std::span<const std::uint8_t> bytes, std::uint64_t h = 1469598103934665603ull) {
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t tensor_digest(const RingTensor& t) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.ptr());
  return fnv64({p, t.size() * sizeof(RingElem)});
}

// A conv (+ optional BN) unit inside a layer, with its weight prefix.
struct ConvUnit {
  std::string prefix;
  std::size_t cin = 0, cout = 0, kh = 1, kw = 1;
  ConvGeometry geom;
  bool bn = true;
};

ConvUnit square_unit(std::string prefix, std::size_t cin, std::size_t cout, std::size_t k,
                     std::size_t stride, bool bn) {
  ConvUnit u;
  u.prefix = std::move(prefix);
  u.cin = cin;
  u.cout = cout;
  u.kh = u.kw = k;
  u.geom = {stride, stride, k / 2, k / 2};
  u.bn = bn;
  return u;
}

std::vector<ConvUnit> conv_units(const LayerSpec& s) {
  const bool bn = !s.folded;
  switch (s.kind) {
    case LayerKind::kConv2D:
    case LayerKind::kConvBNSiLU: {
      ConvUnit u;
      u.prefix = s.name;
      u.cin = s.in_channels;
      u.cout = s.out_channels;
      u.kh = s.kernel_h;
      u.kw = s.kernel_w;
      u.geom = s.geom;
      u.bn = s.kind == LayerKind::kConvBNSiLU && bn;
      return {u};
    }
    case LayerKind::kC3: {
      const std::size_t c = s.out_channels / 2;
      std::vector<ConvUnit> out;
      out.push_back(square_unit(s.name + ".0", s.in_channels, c, 1, 1, bn));
      out.push_back(square_unit(s.name + ".1", s.in_channels, c, 1, 1, bn));
      for (std::size_t j = 1; j <= s.depth; ++j) {
        out.push_back(square_unit(s.name + "." + std::to_string(2 * j), c, c, 1, 1, bn));
        out.push_back(square_unit(s.name + "." + std::to_string(2 * j + 1), c, c, 3, 1, bn));
      }
      out.push_back(
          square_unit(s.name + "." + std::to_string(2 * s.depth + 2), 2 * c, s.out_channels, 1, 1, bn));
      return out;
    }
    case LayerKind::kSPPF: {
      const std::size_t c = s.in_channels / 2;
      return {square_unit(s.name + ".0", s.in_channels, c, 1, 1, bn),
              square_unit(s.name + ".1", 4 * c, s.out_channels, 1, 1, bn)};
    }
    default:
      return {};
  }
}

std::vector<std::string> bn_fields(bool folded) {
  if (folded) return {"scale", "shift"};
  return {"gamma", "beta", "mean", "var"};
}

void expect(bool cond, std::size_t layer, const LayerSpec& s, const std::string& msg) {
  if (!cond)
    throw GraphError("layer " + std::to_string(layer) + " (" + layer_kind_name(s.kind) +
                     (s.name.empty() ? "" : " '" + s.name + "'") + "): " + msg);
}

std::size_t get_pair(const json& j, const char* key, std::size_t def, std::size_t idx) {
  if (!j.contains(key)) return def;
  const json& v = j.at(key);
  if (v.is_array()) return v.at(idx).get<std::size_t>();
  return v.get<std::size_t>();
}

// --- generic layer algorithms --------------------------------------------

template <class V>
struct ConvP {
  const V* w;
  const V* b;
  ConvGeometry g;
};

template <class V>
struct BnP {
  const V* gamma;  // scale when folded
  const V* beta;   // shift when folded
  const V* mean = nullptr;
  const V* var = nullptr;
  double eps = 1e-5;
  bool folded = false;
};

template <class V>
struct CbsP {
  ConvP<V> conv;
  std::optional<BnP<V>> bn;
};

template <class Ops>
using V_ = typename Ops::Value;

template <class Ops>
V_<Ops> expand_c(const Ops& ops, const V_<Ops>& like, const V_<Ops>& v) {
  return ops.wrap(like, expand_channels(Ops::t(v), Ops::t(like).shape()));
}

template <class Ops>
V_<Ops> conv_layer(const Ops& ops, const V_<Ops>& x, const ConvP<V_<Ops>>& p) {
  const V_<Ops> y = ops.trunc(ops.conv2d(x, *p.w, p.g), ops.frac_bits());
  return ops.add(y, expand_c(ops, y, *p.b));
}

template <class Ops>
V_<Ops> batchnorm_layer(const Ops& ops, const V_<Ops>& x, const BnP<V_<Ops>>& p,
                        const ApproxConfig& cfg) {
  const int f = ops.frac_bits();
  if (p.folded) {
    const V_<Ops> y = ops.trunc(ops.mul(x, expand_c(ops, x, *p.gamma)), f);
    return ops.add(y, expand_c(ops, y, *p.beta));
  }
  const V_<Ops> v = ops.add_const(*p.var, detail::enc_at(p.eps, f));
  const V_<Ops> r = detail::rsqrt(ops, v, cfg.newton_iters_rsqrt, cfg.rsqrt_domain);
  const V_<Ops> s = ops.trunc(ops.mul(*p.gamma, r), f);
  const V_<Ops> xc = ops.sub(x, expand_c(ops, x, *p.mean));
  const V_<Ops> y = ops.trunc(ops.mul(xc, expand_c(ops, xc, s)), f);
  return ops.add(y, expand_c(ops, y, *p.beta));
}

template <class Ops>
V_<Ops> cbs_layer(const Ops& ops, const V_<Ops>& x, const CbsP<V_<Ops>>& p,
                  const ApproxConfig& cfg) {
  V_<Ops> y = conv_layer(ops, x, p.conv);
  if (p.bn) y = batchnorm_layer(ops, y, *p.bn, cfg);
  return detail::silu(ops, y, cfg);
}

template <class Ops>
V_<Ops> bottleneck_layer(const Ops& ops, const V_<Ops>& x, const CbsP<V_<Ops>>& p0,
                         const CbsP<V_<Ops>>& p1, bool residual, const ApproxConfig& cfg) {
  const V_<Ops> t = cbs_layer(ops, cbs_layer(ops, x, p0, cfg), p1, cfg);
  if (!residual) return t;
  if (Ops::t(t).shape() != Ops::t(x).shape())
    throw ShapeError("bottleneck residual: " + shape_str(Ops::t(x).shape()) + " vs " +
                     shape_str(Ops::t(t).shape()));
  return ops.add(x, t);
}

template <class Ops>
V_<Ops> concat_values(const Ops& ops, const std::vector<V_<Ops>>& parts, std::size_t axis) {
  std::vector<RingTensor> ts;
  ts.reserve(parts.size());
  for (const auto& p : parts) ts.push_back(Ops::t(p));
  return ops.wrap(parts.at(0), concat(ts, axis));
}

template <class Ops>
V_<Ops> c3_layer(const Ops& ops, const V_<Ops>& x, const std::vector<CbsP<V_<Ops>>>& sets,
                 std::size_t n, bool shortcut, const ApproxConfig& cfg) {
  if (sets.size() != 2 * n + 3)
    throw GraphError("C3 with n=" + std::to_string(n) + " needs " + std::to_string(2 * n + 3) +
                     " ConvBNSiLU sets, got " + std::to_string(sets.size()));
  V_<Ops> t0 = cbs_layer(ops, x, sets[0], cfg);
  const V_<Ops> t1 = cbs_layer(ops, x, sets[1], cfg);
  for (std::size_t j = 1; j <= n; ++j)
    t0 = bottleneck_layer(ops, t0, sets[2 * j], sets[2 * j + 1], shortcut, cfg);
  return cbs_layer(ops, concat_values(ops, {t0, t1}, 1), sets[2 * n + 2], cfg);
}

template <class Ops>
V_<Ops> sppf_layer(const Ops& ops, const V_<Ops>& x, const CbsP<V_<Ops>>& p0,
                   const CbsP<V_<Ops>>& p1, std::size_t pool, const ApproxConfig& cfg) {
  const PoolGeometry pg{pool, 1, pool / 2};
  const V_<Ops> t0 = cbs_layer(ops, x, p0, cfg);
  const V_<Ops> t1 = detail::maxpool2d(ops, t0, pg);
  const V_<Ops> t2 = detail::maxpool2d(ops, t1, pg);
  const V_<Ops> t3 = detail::maxpool2d(ops, t2, pg);
  return cbs_layer(ops, concat_values(ops, {t0, t1, t2, t3}, 1), p1, cfg);
}

template <class Ops>
V_<Ops> gap_layer(const Ops& ops, const V_<Ops>& x) {
  const Shape& sh = Ops::t(x).shape();
  if (sh.size() < 3) throw ShapeError("GAP expects N x C x ...");
  std::size_t area = 1;
  for (std::size_t i = 2; i < sh.size(); ++i) area *= sh[i];
  if (area == 0) throw ShapeError("GAP over an empty window");
  const V_<Ops> s = ops.wrap(x, sum_trailing(Ops::t(x), 2));
  const RingElem inv = detail::enc_at(1.0 / static_cast<double>(area), ops.frac_bits());
  return ops.trunc(ops.scale(s, static_cast<std::int64_t>(inv)), ops.frac_bits());
}

template <class Ops>
V_<Ops> fc_layer(const Ops& ops, const V_<Ops>& x, const V_<Ops>& w, const V_<Ops>& b) {
  const Shape& sh = Ops::t(x).shape();
  if (sh.empty()) throw ShapeError("FC on a scalar");
  const std::size_t n = sh[0];
  const V_<Ops> flat = ops.wrap(x, Ops::t(x).reshaped({n, Ops::t(x).size() / std::max<std::size_t>(n, 1)}));
  const V_<Ops> y = ops.trunc(ops.matmul(flat, w), ops.frac_bits());
  return ops.add(y, expand_c(ops, y, b));
}

template <class Ops>
V_<Ops> detect_layer(const Ops& ops, const std::vector<const V_<Ops>*>& xs,
                     const std::vector<ConvP<V_<Ops>>>& convs, std::size_t na, std::size_t no) {
  std::vector<V_<Ops>> parts;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const V_<Ops> y = conv_layer(ops, *xs[i], convs[i]);
    const Shape& s = Ops::t(y).shape();
    const std::size_t n = s[0], h = s[2], w = s[3];
    const RingTensor r = Ops::t(y).reshaped({n, na, no, h, w});
    const std::size_t order[] = {0, 1, 3, 4, 2};
    parts.push_back(ops.wrap(y, permute(r, order).reshaped({n, na * h * w, no})));
  }
  return concat_values(ops, parts, 1);
}

// --- graph executor ---------------------------------------------------------

template <class Ops>
struct Executor {
  const Ops& ops;
  const ModelGraph& g;
  const std::map<std::string, V_<Ops>, std::less<>>& w;
  const ApproxConfig& cfg;

  const V_<Ops>& weight(const std::string& name) const {
    const auto it = w.find(name);
    if (it == w.end()) throw GraphError("missing weight '" + name + "'");
    return it->second;
  }

  CbsP<V_<Ops>> cbs(const ConvUnit& u, const LayerSpec& s) const {
    CbsP<V_<Ops>> p{{&weight(u.prefix + ".w"), &weight(u.prefix + ".b"), u.geom}, std::nullopt};
    if (u.bn)
      p.bn = BnP<V_<Ops>>{&weight(u.prefix + ".bn.gamma"), &weight(u.prefix + ".bn.beta"),
                          &weight(u.prefix + ".bn.mean"),  &weight(u.prefix + ".bn.var"),
                          s.eps, false};
    return p;
  }

  V_<Ops> run(const V_<Ops>& x, ForwardTrace* trace) const {
    const auto table = g.residual_table();
    std::map<int, std::pair<V_<Ops>, std::uint64_t>> saved;
    if (trace) trace->layer_shapes.clear(), trace->reads.clear();
    V_<Ops> prev = x;
    if (table.count(-1)) saved.emplace(-1, std::make_pair(x, tensor_digest(Ops::t(x))));
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      const LayerSpec& s = g.layers[i];
      const std::vector<int> src = g.sources(i);
      std::vector<const V_<Ops>*> in;
      for (int sidx : src) {
        if (sidx == static_cast<int>(i) - 1) {
          in.push_back(&prev);
          continue;
        }
        const auto it = saved.find(sidx);
        if (it == saved.end())
          throw GraphError("layer " + std::to_string(i) + " reads unsaved layer " +
                           std::to_string(sidx));
        in.push_back(&it->second.first);
        if (trace) {
          const auto& shapes = trace->layer_shapes;
          ResidualRead rr;
          rr.consumer = static_cast<int>(i);
          rr.source = sidx;
          rr.recorded = sidx < 0 ? Ops::t(x).shape() : shapes.at(static_cast<std::size_t>(sidx));
          rr.read = Ops::t(it->second.first).shape();
          rr.same_data = tensor_digest(Ops::t(it->second.first)) == it->second.second;
          trace->reads.push_back(std::move(rr));
        }
      }
      V_<Ops> out = layer(s, in);
      if (trace) trace->layer_shapes.push_back(Ops::t(out).shape());
      if (table.count(static_cast<int>(i)))
        saved.insert_or_assign(static_cast<int>(i),
                               std::make_pair(out, tensor_digest(Ops::t(out))));
      prev = std::move(out);
    }
    return prev;
  }

  V_<Ops> layer(const LayerSpec& s, const std::vector<const V_<Ops>*>& in) const {
    const V_<Ops>& x = *in.at(0);
    switch (s.kind) {
      case LayerKind::kConv2D: {
        const ConvUnit u = conv_units(s).at(0);
        return conv_layer(ops, x, ConvP<V_<Ops>>{&weight(u.prefix + ".w"),
                                                 &weight(u.prefix + ".b"), u.geom});
      }
      case LayerKind::kConvBNSiLU:
        return cbs_layer(ops, x, cbs(conv_units(s).at(0), s), cfg);
      case LayerKind::kBatchNorm: {
        BnP<V_<Ops>> p;
        if (s.folded) {
          p = {&weight(s.name + ".scale"), &weight(s.name + ".shift"), nullptr, nullptr, s.eps, true};
        } else {
          p = {&weight(s.name + ".gamma"), &weight(s.name + ".beta"), &weight(s.name + ".mean"),
               &weight(s.name + ".var"), s.eps, false};
        }
        return batchnorm_layer(ops, x, p, cfg);
      }
      case LayerKind::kReLU:
        return detail::relu(ops, x);
      case LayerKind::kELU:
        return detail::elu(ops, x, cfg);
      case LayerKind::kC3: {
        std::vector<CbsP<V_<Ops>>> sets;
        for (const auto& u : conv_units(s)) sets.push_back(cbs(u, s));
        return c3_layer(ops, x, sets, s.depth, s.shortcut, cfg);
      }
      case LayerKind::kSPPF: {
        const auto us = conv_units(s);
        return sppf_layer(ops, x, cbs(us[0], s), cbs(us[1], s), s.pool, cfg);
      }
      case LayerKind::kConcat: {
        std::vector<V_<Ops>> parts;
        for (const auto* p : in) parts.push_back(*p);
        return concat_values(ops, parts, 1);
      }
      case LayerKind::kUpsample:
        return ops.wrap(x, upsample_nearest2x(Ops::t(x)));
      case LayerKind::kGAP:
        return gap_layer(ops, x);
      case LayerKind::kFC:
        return fc_layer(ops, x, weight(s.name + ".w"), weight(s.name + ".b"));
      case LayerKind::kLogSoftmax:
        return detail::log_softmax(ops, x, cfg);
      case LayerKind::kDetect: {
        std::vector<ConvP<V_<Ops>>> convs;
        for (std::size_t k = 0; k < in.size(); ++k) {
          const std::string p = s.name + "." + std::to_string(k);
          convs.push_back({&weight(p + ".w"), &weight(p + ".b"), ConvGeometry{}});
        }
        return detect_layer(ops, in, convs, s.anchors, s.outputs);
      }
    }
    throw GraphError("unhandled layer kind");
  }
};

template <class V>
CbsP<V> cbs_view(const SecCbs& p) {
  CbsP<V> out{{&p.conv.w, &p.conv.b, p.conv.geom}, std::nullopt};
  if (p.bn) out.bn = BnP<V>{&p.bn->gamma, &p.bn->beta, &p.bn->mean, &p.bn->var, p.bn->eps, false};
  return out;
}

}  // namespace

const char* layer_kind_name(LayerKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

LayerKind parse_layer_kind(std::string_view s) {
  for (const auto& [kind, name] : kKindNames)
    if (s == name) return kind;
  throw GraphError("unknown layer kind '" + std::string(s) + "'");
}

LayerKind parse_activation(std::string_view s) {
  std::string l(s);
  for (char& c : l) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "relu") return LayerKind::kReLU;
  if (l == "elu") return LayerKind::kELU;
  throw GraphError("unknown activation '" + std::string(s) + "' (relu|elu)");
}

std::vector<int> ModelGraph::sources(std::size_t i) const {
  const LayerSpec& s = layers.at(i);
  std::vector<int> out;
  if (s.from.empty()) return {static_cast<int>(i) - 1};
  for (int f : s.from) {
    const int r = f == -1 ? static_cast<int>(i) - 1 : f;
    if (r < -1 || r >= static_cast<int>(i))
      throw GraphError("layer " + std::to_string(i) + " references layer " + std::to_string(f) +
                       ", which is not an earlier layer");
    out.push_back(r);
  }
  return out;
}

std::map<int, std::vector<int>> ModelGraph::residual_table() const {
  std::map<int, std::vector<int>> t;
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (int s : sources(i))
      if (s != static_cast<int>(i) - 1) t[s].push_back(static_cast<int>(i));
  return t;
}

std::vector<Shape> ModelGraph::infer_shapes(std::size_t batch) const {
  if (input.empty()) throw GraphError("graph input shape is empty");
  Shape in{batch};
  in.insert(in.end(), input.begin(), input.end());
  std::vector<Shape> out;
  auto shape_of = [&](int idx) -> const Shape& {
    return idx < 0 ? in : out.at(static_cast<std::size_t>(idx));
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& s = layers[i];
    const std::vector<int> src = sources(i);
    const Shape& x = shape_of(src.at(0));
    const bool multi = s.kind == LayerKind::kConcat || s.kind == LayerKind::kDetect;
    expect(multi || src.size() == 1, i, s, "takes exactly one input");
    Shape y;
    auto need4 = [&](const Shape& sh) { expect(sh.size() == 4, i, s, "expects N x C x H x W, got " + shape_str(sh)); };
    switch (s.kind) {
      case LayerKind::kConv2D:
      case LayerKind::kConvBNSiLU: {
        need4(x);
        expect(x[1] == s.in_channels, i, s,
               "input has " + std::to_string(x[1]) + " channels, expected " +
                   std::to_string(s.in_channels));
        expect(s.out_channels > 0, i, s, "out_channels must be positive");
        try {
          y = conv_output_shape(x, {s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, s.geom);
        } catch (const ShapeError& e) {
          expect(false, i, s, e.what());
        }
        break;
      }
      case LayerKind::kBatchNorm:
        expect(x.size() >= 2 && x[1] == s.out_channels, i, s,
               "channel count mismatch for " + shape_str(x));
        y = x;
        break;
      case LayerKind::kReLU:
      case LayerKind::kELU:
        y = x;
        break;
      case LayerKind::kLogSoftmax:
        expect(x.size() >= 2 && x.back() >= 2, i, s, "needs a last axis of length >= 2");
        y = x;
        break;
      case LayerKind::kC3:
        need4(x);
        expect(x[1] == s.in_channels, i, s, "input channel mismatch");
        expect(s.out_channels >= 2 && s.out_channels % 2 == 0, i, s,
               "out_channels must be even and >= 2");
        expect(s.depth >= 1, i, s, "depth must be >= 1");
        y = {x[0], s.out_channels, x[2], x[3]};
        break;
      case LayerKind::kSPPF:
        need4(x);
        expect(x[1] == s.in_channels && s.in_channels >= 2 && s.in_channels % 2 == 0, i, s,
               "input channels must match and be even");
        expect(s.pool % 2 == 1, i, s, "pool kernel must be odd");
        y = {x[0], s.out_channels, x[2], x[3]};
        break;
      case LayerKind::kConcat: {
        need4(x);
        y = x;
        y[1] = 0;
        for (int si : src) {
          const Shape& p = shape_of(si);
          need4(p);
          expect(p[0] == x[0] && p[2] == x[2] && p[3] == x[3], i, s,
                 "cannot concatenate " + shape_str(p) + " with " + shape_str(x));
          y[1] += p[1];
        }
        break;
      }
      case LayerKind::kUpsample:
        need4(x);
        y = {x[0], x[1], 2 * x[2], 2 * x[3]};
        break;
      case LayerKind::kGAP:
        need4(x);
        y = {x[0], x[1]};
        break;
      case LayerKind::kFC: {
        expect(x.size() >= 2, i, s, "expects a batch of vectors");
        const std::size_t k = numel(x) / x[0];
        expect(k == s.in_channels, i, s,
               "input has " + std::to_string(k) + " features, expected " +
                   std::to_string(s.in_channels));
        y = {x[0], s.out_channels};
        break;
      }
      case LayerKind::kDetect: {
        std::size_t boxes = 0;
        for (int si : src) {
          const Shape& p = shape_of(si);
          need4(p);
          boxes += s.anchors * p[2] * p[3];
        }
        y = {x[0], boxes, s.outputs};
        break;
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

Shape ModelGraph::output_shape(std::size_t batch) const {
  auto s = infer_shapes(batch);
  if (s.empty()) {
    Shape in{batch};
    in.insert(in.end(), input.begin(), input.end());
    return in;
  }
  return s.back();
}

std::vector<std::pair<std::string, Shape>> ModelGraph::weight_specs() const {
  const auto shapes = infer_shapes(1);
  std::vector<std::pair<std::string, Shape>> out;
  auto add_unit = [&](const ConvUnit& u) {
    out.emplace_back(u.prefix + ".w", Shape{u.cout, u.cin, u.kh, u.kw});
    out.emplace_back(u.prefix + ".b", Shape{u.cout});
    if (u.bn)
      for (const auto& f : bn_fields(false)) out.emplace_back(u.prefix + ".bn." + f, Shape{u.cout});
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& s = layers[i];
    switch (s.kind) {
      case LayerKind::kConv2D:
      case LayerKind::kConvBNSiLU:
      case LayerKind::kC3:
      case LayerKind::kSPPF:
        for (const auto& u : conv_units(s)) add_unit(u);
        break;
      case LayerKind::kBatchNorm:
        for (const auto& f : bn_fields(s.folded)) out.emplace_back(s.name + "." + f, Shape{s.out_channels});
        break;
      case LayerKind::kFC:
        out.emplace_back(s.name + ".w", Shape{s.in_channels, s.out_channels});
        out.emplace_back(s.name + ".b", Shape{s.out_channels});
        break;
      case LayerKind::kDetect: {
        const auto src = sources(i);
        for (std::size_t k = 0; k < src.size(); ++k) {
          const std::size_t c =
              src[k] < 0 ? input.at(0) : shapes.at(static_cast<std::size_t>(src[k]))[1];
          const std::string p = s.name + "." + std::to_string(k);
          out.emplace_back(p + ".w", Shape{s.anchors * s.outputs, c, 1, 1});
          out.emplace_back(p + ".b", Shape{s.anchors * s.outputs});
        }
        break;
      }
      default:
        break;
    }
  }
  return out;
}

std::string ModelGraph::to_json() const {
  json j;
  j["name"] = name;
  j["input"] = input;
  j["init"] = init == WeightInit::kUnit ? "unit" : "fan_in";
  j["input_range"] = {input_lo, input_hi};
  json ls = json::array();
  for (const auto& s : layers) {
    json l;
    l["kind"] = layer_kind_name(s.kind);
    if (!s.name.empty()) l["name"] = s.name;
    if (!s.from.empty()) l["from"] = s.from;
    switch (s.kind) {
      case LayerKind::kConv2D:
      case LayerKind::kConvBNSiLU:
        l["in"] = s.in_channels;
        l["out"] = s.out_channels;
        l["kernel"] = {s.kernel_h, s.kernel_w};
        l["stride"] = {s.geom.stride_h, s.geom.stride_w};
        l["pad"] = {s.geom.pad_h, s.geom.pad_w};
        break;
      case LayerKind::kBatchNorm:
        l["channels"] = s.out_channels;
        break;
      case LayerKind::kC3:
        l["in"] = s.in_channels;
        l["out"] = s.out_channels;
        l["n"] = s.depth;
        l["shortcut"] = s.shortcut;
        break;
      case LayerKind::kSPPF:
        l["in"] = s.in_channels;
        l["out"] = s.out_channels;
        l["k"] = s.pool;
        break;
      case LayerKind::kFC:
        l["in"] = s.in_channels;
        l["out"] = s.out_channels;
        break;
      case LayerKind::kDetect:
        l["anchors"] = s.anchors;
        l["outputs"] = s.outputs;
        break;
      default:
        break;
    }
    if (s.kind == LayerKind::kBatchNorm || s.kind == LayerKind::kConvBNSiLU ||
        s.kind == LayerKind::kC3 || s.kind == LayerKind::kSPPF)
      l["eps"] = s.eps;
    if (s.folded) l["folded"] = true;
    ls.push_back(std::move(l));
  }
  j["layers"] = std::move(ls);
  return j.dump();
}

std::uint64_t ModelGraph::fingerprint() const {
  const std::string s = to_json();
  return fnv64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

ModelGraph parse_manifest(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  try {
    ModelGraph g;
    g.name = j.value("name", "");
    g.input = j.at("input").get<Shape>();
    const std::string init = j.value("init", "unit");
    if (init == "unit") g.init = WeightInit::kUnit;
    else if (init == "fan_in") g.init = WeightInit::kFanIn;
    else throw GraphError("manifest: unknown init '" + init + "'");
    if (j.contains("input_range")) {
      g.input_lo = j["input_range"].at(0).get<double>();
      g.input_hi = j["input_range"].at(1).get<double>();
    }
    for (const json& l : j.at("layers")) {
      LayerSpec s;
      s.kind = parse_layer_kind(l.at("kind").get<std::string>());
      s.name = l.value("name", "");
      if (l.contains("from")) {
        if (l["from"].is_array()) s.from = l["from"].get<std::vector<int>>();
        else s.from = {l["from"].get<int>()};
      }
      s.in_channels = l.value("in", std::size_t{0});
      s.out_channels = l.value("out", l.value("channels", std::size_t{0}));
      if (s.kind == LayerKind::kBatchNorm) s.in_channels = s.out_channels;
      s.kernel_h = get_pair(l, "kernel", 1, 0);
      s.kernel_w = get_pair(l, "kernel", 1, 1);
      s.geom.stride_h = get_pair(l, "stride", 1, 0);
      s.geom.stride_w = get_pair(l, "stride", 1, 1);
      s.geom.pad_h = get_pair(l, "pad", 0, 0);
      s.geom.pad_w = get_pair(l, "pad", 0, 1);
      s.depth = l.value("n", std::size_t{1});
      s.shortcut = l.value("shortcut", true);
      s.pool = l.value("k", std::size_t{5});
      s.eps = l.value("eps", 1e-5);
      s.anchors = l.value("anchors", std::size_t{3});
      s.outputs = l.value("outputs", std::size_t{85});
      s.folded = l.value("folded", false);
      const bool named = s.kind == LayerKind::kConv2D || s.kind == LayerKind::kConvBNSiLU ||
                         s.kind == LayerKind::kBatchNorm || s.kind == LayerKind::kC3 ||
                         s.kind == LayerKind::kSPPF || s.kind == LayerKind::kFC ||
                         s.kind == LayerKind::kDetect;
      if (named && s.name.empty())
        throw GraphError(std::string("manifest: ") + layer_kind_name(s.kind) + " layer needs a name");
      g.layers.push_back(std::move(s));
    }
    g.infer_shapes(1);
    return g;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

ModelGraph load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

void check_weights(const ModelGraph& g, const WeightSet& w) {
  for (const auto& [name, shape] : g.weight_specs()) {
    const auto it = w.find(name);
    if (it == w.end()) throw GraphError("missing weight '" + name + "'");
    if (it->second.shape() != shape)
      throw GraphError("weight '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", expected " + shape_str(shape));
  }
}

WeightSet load_weights(const ModelGraph& g, const std::filesystem::path& dir,
                       const FixedPointConfig& fp) {
  WeightSet w;
  for (const auto& [name, shape] : g.weight_specs())
    w.emplace(name, load_rtf1(dir / (name + ".rtf1"), fp));
  check_weights(g, w);
  return w;
}

void save_weights(const WeightSet& w, const std::filesystem::path& dir,
                  const FixedPointConfig& fp) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : w) write_rtf1(dir / (name + ".rtf1"), decode_ring(t, fp));
}

WeightSet synth_weights(const ModelGraph& g, std::uint64_t seed, const FixedPointConfig& fp) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  WeightSet w;
  for (const auto& [name, shape] : g.weight_specs()) {
    const std::size_t n = numel(shape);
    std::vector<double> v(n);
    auto ends_with = [&](std::string_view suf) {
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    const bool is_w = ends_with(".w");
    for (double& x : v) {
      if (g.init == WeightInit::kUnit) {
        x = ends_with(".var") ? uni(0.25, 1.0) : uni(-1.0, 1.0);
      } else if (is_w) {
        const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
        const double a = std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        x = uni(-a, a);
      } else if (ends_with(".gamma") || ends_with(".var")) {
        x = uni(0.5, 1.5);
      } else if (ends_with(".beta") || ends_with(".mean")) {
        x = uni(-0.5, 0.5);
      } else {
        x = uni(-0.1, 0.1);
      }
    }
    w.emplace(name, RingTensor::encode(v, shape, fp));
  }
  return w;
}

RingTensor synth_input(const ModelGraph& g, std::size_t batch, std::uint64_t seed,
                       const FixedPointConfig& fp) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(g.input_lo, g.input_hi);
  Shape s{batch};
  s.insert(s.end(), g.input.begin(), g.input.end());
  std::vector<double> v(numel(s));
  for (double& x : v) x = d(rng);
  return RingTensor::encode(v, s, fp);
}

std::pair<ModelGraph, WeightSet> fold_batchnorm(const ModelGraph& g, const WeightSet& w,
                                                const FixedPointConfig& fp) {
  check_weights(g, w);
  ModelGraph out = g;
  WeightSet ow;
  auto dec = [&](const std::string& n) { return w.at(n).decode(fp); };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& s = g.layers[i];
    if (s.folded) continue;
    if (s.kind == LayerKind::kBatchNorm) {
      const auto gm = dec(s.name + ".gamma"), bt = dec(s.name + ".beta"),
                 mu = dec(s.name + ".mean"), var = dec(s.name + ".var");
      std::vector<double> sc(gm.size()), sh(gm.size());
      for (std::size_t c = 0; c < gm.size(); ++c) {
        sc[c] = gm[c] / std::sqrt(var[c] + s.eps);
        sh[c] = bt[c] - mu[c] * sc[c];
      }
      ow.emplace(s.name + ".scale", RingTensor::encode(sc, {sc.size()}, fp));
      ow.emplace(s.name + ".shift", RingTensor::encode(sh, {sh.size()}, fp));
      out.layers[i].folded = true;
    } else if (s.kind == LayerKind::kConvBNSiLU || s.kind == LayerKind::kC3 ||
               s.kind == LayerKind::kSPPF) {
      for (const auto& u : conv_units(s)) {
        const std::string p = u.prefix;
        auto wt = dec(p + ".w");
        auto b = dec(p + ".b");
        const auto gm = dec(p + ".bn.gamma"), bt = dec(p + ".bn.beta"),
                   mu = dec(p + ".bn.mean"), var = dec(p + ".bn.var");
        const std::size_t per = wt.size() / u.cout;
        for (std::size_t o = 0; o < u.cout; ++o) {
          const double sc = gm[o] / std::sqrt(var[o] + s.eps);
          for (std::size_t k = 0; k < per; ++k) wt[o * per + k] *= sc;
          b[o] = (b[o] - mu[o]) * sc + bt[o];
        }
        ow.emplace(p + ".w", RingTensor::encode(wt, w.at(p + ".w").shape(), fp));
        ow.emplace(p + ".b", RingTensor::encode(b, {u.cout}, fp));
      }
      out.layers[i].folded = true;
    }
  }
  // Everything the folded graph still references is carried over unchanged.
  for (const auto& [name, shape] : out.weight_specs())
    if (!ow.count(name)) ow.emplace(name, w.at(name));
  return {std::move(out), std::move(ow)};
}

ModelGraph folded_structure(const ModelGraph& g) {
  ModelGraph out = g;
  for (auto& l : out.layers)
    if (l.kind == LayerKind::kBatchNorm || l.kind == LayerKind::kConvBNSiLU ||
        l.kind == LayerKind::kC3 || l.kind == LayerKind::kSPPF)
      l.folded = true;
  return out;
}

ModelGraph with_activation(const ModelGraph& g, LayerKind act) {
  if (act != LayerKind::kReLU && act != LayerKind::kELU)
    throw GraphError("activation must be ReLU or ELU");
  ModelGraph out = g;
  for (auto& l : out.layers)
    if (l.kind == LayerKind::kReLU || l.kind == LayerKind::kELU) l.kind = act;
  return out;
}

bool ForwardTrace::all_verified() const {
  for (const auto& r : reads)
    if (!r.ok()) return false;
  return true;
}

RingTensor oracle_forward(const ModelGraph& g, const WeightSet& w, const RingTensor& x,
                          const ForwardOptions& opt, ForwardTrace* trace) {
  check_weights(g, w);
  const Shape want = [&] {
    Shape s{x.rank() ? x.dim(0) : 0};
    s.insert(s.end(), g.input.begin(), g.input.end());
    return s;
  }();
  if (x.shape() != want)
    throw ShapeError("oracle_forward: input " + shape_str(x.shape()) + ", graph expects " +
                     shape_str(want));
  const detail::PlainOps ops{opt.fp};
  return Executor<detail::PlainOps>{ops, g, w, opt.approx}.run(x, trace);
}

SharedWeights share_weights(ProtocolCtx& ctx, const ModelGraph& g, const WeightSet* w) {
  if (ctx.party() == PartyId::kP1) {
    if (!w) throw std::invalid_argument("share_weights: P1 must supply the weights");
    check_weights(g, *w);
  }
  SharedWeights out;
  for (const auto& [name, shape] : g.weight_specs()) {
    const RingTensor* v = ctx.party() == PartyId::kP1 ? &w->at(name) : nullptr;
    out.emplace(name, share_input(ctx, PartyId::kP1, v, shape));
  }
  return out;
}

ArithShare secure_forward(ProtocolCtx& ctx, const ModelGraph& g, const SharedWeights& w,
                          const ArithShare& x, const ApproxConfig& cfg, ForwardTrace* trace) {
  g.infer_shapes(x.shape().empty() ? 1 : x.shape()[0]);
  const detail::SecureOps ops{ctx};
  return Executor<detail::SecureOps>{ops, g, w, cfg}.run(x, trace);
}

ArithShare sec_conv(ProtocolCtx& ctx, const ArithShare& x, const SecConv& p) {
  return conv_layer(detail::SecureOps{ctx}, x, ConvP<ArithShare>{&p.w, &p.b, p.geom});
}

ArithShare sec_batchnorm(ProtocolCtx& ctx, const ArithShare& x, const SecBatchNorm& p,
                         const ApproxConfig& cfg) {
  return batchnorm_layer(detail::SecureOps{ctx}, x,
                         BnP<ArithShare>{&p.gamma, &p.beta, &p.mean, &p.var, p.eps, false}, cfg);
}

ArithShare sec_gap(ProtocolCtx& ctx, const ArithShare& x) {
  return gap_layer(detail::SecureOps{ctx}, x);
}

ArithShare sec_fc(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w, const ArithShare& b) {
  return fc_layer(detail::SecureOps{ctx}, x, w, b);
}

ArithShare sec_convbnsilu(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p,
                          const ApproxConfig& cfg) {
  return cbs_layer(detail::SecureOps{ctx}, x, cbs_view<ArithShare>(p), cfg);
}

ArithShare sec_bottleneck1(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p0,
                           const SecCbs& p1, const ApproxConfig& cfg) {
  return bottleneck_layer(detail::SecureOps{ctx}, x, cbs_view<ArithShare>(p0),
                          cbs_view<ArithShare>(p1), true, cfg);
}

ArithShare sec_bottleneck2(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p0,
                           const SecCbs& p1, const ApproxConfig& cfg) {
  return bottleneck_layer(detail::SecureOps{ctx}, x, cbs_view<ArithShare>(p0),
                          cbs_view<ArithShare>(p1), false, cfg);
}

ArithShare sec_c3(ProtocolCtx& ctx, const ArithShare& x, const std::vector<SecCbs>& sets,
                  std::size_t n, bool shortcut, const ApproxConfig& cfg) {
  std::vector<CbsP<ArithShare>> v;
  for (const auto& s : sets) v.push_back(cbs_view<ArithShare>(s));
  return c3_layer(detail::SecureOps{ctx}, x, v, n, shortcut, cfg);
}

ArithShare sec_sppf(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p0, const SecCbs& p1,
                    std::size_t pool, const ApproxConfig& cfg) {
  return sppf_layer(detail::SecureOps{ctx}, x, cbs_view<ArithShare>(p0), cbs_view<ArithShare>(p1),
                    pool, cfg);
}

}  // namespace mpcnn
