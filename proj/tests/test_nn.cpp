#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mpcnn/nn.hpp"
#include "two_party.hpp"

using namespace mpcnn;
using mpcnn::test::run_two_party;

namespace {

std::filesystem::path model_dir() {
  const char* d = std::getenv("MPCNN_MODEL_DIR");
  return d ? d : "models";
}

ModelGraph compactcnn() { return load_manifest(model_dir() / "compactcnn.json"); }
ModelGraph yolo() { return load_manifest(model_dir() / "yolov5-micro.json"); }

ArithShare from_p1(ProtocolCtx& ctx, const RingTensor& t) {
  return share_input(ctx, PartyId::kP1, ctx.is_p0() ? nullptr : &t, t.shape());
}
ArithShare from_p0(ProtocolCtx& ctx, const RingTensor& t) {
  return share_input(ctx, PartyId::kP0, ctx.is_p0() ? &t : nullptr, t.shape());
}

RingTensor enc(std::vector<double> v, Shape s) { return RingTensor::encode(v, std::move(s)); }

RingTensor uniform(std::mt19937_64& rng, Shape s, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel(s));
  for (auto& e : v) e = d(rng);
  return RingTensor::encode(v, std::move(s));
}

double max_abs_diff(const RingTensor& a, const RingTensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(decode(a[i]) - decode(b[i])));
  return m;
}

// Double precision references, independent of the ring code.
std::vector<double> conv_ref(const std::vector<double>& x, const Shape& xs,
                             const std::vector<double>& w, const Shape& ws,
                             const std::vector<double>& b, std::size_t pad) {
  const std::size_t C = xs[1], H = xs[2], W = xs[3], O = ws[0], K = ws[2];
  const std::size_t OH = H + 2 * pad - K + 1, OW = W + 2 * pad - K + 1;
  std::vector<double> y(O * OH * OW);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t a = 0; a < K; ++a)
            for (std::size_t q = 0; q < K; ++q) {
              const long r = static_cast<long>(i + a) - static_cast<long>(pad);
              const long s = static_cast<long>(j + q) - static_cast<long>(pad);
              if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
              acc += x[(c * H + r) * W + s] * w[((o * C + c) * K + a) * K + q];
            }
        y[(o * OH + i) * OW + j] = acc;
      }
  return y;
}

double silu_ref(double v) { return v / (1 + std::exp(-v)); }

}  // namespace

TEST_CASE("CompactCNN manifest and shapes") {
  const ModelGraph g = compactcnn();
  CHECK(g.input == Shape{1, 1, 384});
  const auto shapes = g.infer_shapes(1);
  REQUIRE(shapes.size() == 5);
  CHECK(shapes[0] == Shape{1, 32, 1, 321});
  CHECK(shapes[3] == Shape{1, 32});
  CHECK(g.output_shape(1) == Shape{1, 2});
  CHECK(g.output_shape(7) == Shape{7, 2});
  CHECK(parse_manifest(g.to_json()).fingerprint() == g.fingerprint());
  CHECK(g.residual_table().empty());
}

TEST_CASE("manifest errors are caught before execution") {
  CHECK_THROWS_AS(parse_manifest("{not json"), FormatError);
  CHECK_THROWS_AS(parse_manifest(R"({"input":[1,4,4],"layers":[{"kind":"Dropout"}]})"), GraphError);
  CHECK_THROWS_AS(
      parse_manifest(R"({"input":[1,4,4],"layers":[{"kind":"Conv2D","in":1,"out":2,"kernel":[3,3]}]})"),
      GraphError);  // unnamed
  CHECK_THROWS_AS(parse_manifest(R"({"input":[1,4,4],"layers":[
        {"kind":"Conv2D","name":"c","in":3,"out":2,"kernel":[3,3]}]})"),
                  GraphError);  // channel mismatch
  CHECK_THROWS_AS(parse_manifest(R"({"input":[1,4,4],"layers":[
        {"kind":"Concat","from":[-1,2]},{"kind":"ReLU"},{"kind":"ReLU"}]})"),
                  GraphError);  // forward reference
  CHECK_THROWS_AS(parse_manifest(R"({"input":[2,4,4],"layers":[
        {"kind":"Conv2D","name":"c","in":2,"out":2,"kernel":[9,9]}]})"),
                  std::invalid_argument);  // kernel larger than the input
  CHECK_THROWS_AS(parse_manifest(R"({"input":[1,4,4],"init":"xavier","layers":[]})"), GraphError);
  CHECK_THROWS_AS(load_manifest("/nonexistent/m.json"), FormatError);
  CHECK(parse_layer_kind("ConvBNSiLU") == LayerKind::kConvBNSiLU);
  CHECK(parse_activation("ELU") == LayerKind::kELU);
  CHECK_THROWS_AS(parse_activation("tanh"), GraphError);
}

TEST_CASE("YOLO micro graph: residual table points backwards") {
  const ModelGraph g = yolo();
  const auto table = g.residual_table();
  CHECK_FALSE(table.empty());
  for (const auto& [src, consumers] : table)
    for (int c : consumers) CHECK(src < c);
  const Shape out = g.output_shape(1);
  CHECK(out.size() >= 2);
  CHECK(g.infer_shapes(2).back()[0] == 2);
}

TEST_CASE("zero weights give the FC bias") {
  const ModelGraph g = compactcnn();
  WeightSet w = synth_weights(g, 1);
  for (auto& [name, t] : w) t = RingTensor(t.shape());
  w["bn.var"] = RingTensor({32}, encode(1));
  w["fc.b"] = enc({0.3, -0.2}, {2});
  std::mt19937_64 rng(2);
  const RingTensor x = uniform(rng, {1, 1, 1, 384}, -4, 4);
  const RingTensor want = enc({0.3, -0.2}, {1, 2});
  CHECK(oracle_forward(g, w, x) == want);
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const SharedWeights sw = share_weights(ctx, g, ctx.is_p0() ? nullptr : &w);
    return *reveal(ctx, secure_forward(ctx, g, sw, from_p0(ctx, x)), RevealTo::kBoth);
  });
  CHECK(max_abs_diff(a.first, want) <= 4.0 / 65536);
}

TEST_CASE("a 1x1 identity convolution reproduces its input") {
  const ModelGraph g = parse_manifest(R"({"input":[2,3,3],"layers":[
      {"kind":"Conv2D","name":"id","in":2,"out":2,"kernel":[1,1]}]})");
  WeightSet w;
  w["id.w"] = enc({1, 0, 0, 1}, {2, 2, 1, 1});
  w["id.b"] = RingTensor({2});
  std::mt19937_64 rng(3);
  const RingTensor x = uniform(rng, {1, 2, 3, 3}, -5, 5);
  CHECK(oracle_forward(g, w, x) == x);
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const SharedWeights sw = share_weights(ctx, g, ctx.is_p0() ? nullptr : &w);
    return *reveal(ctx, secure_forward(ctx, g, sw, from_p0(ctx, x)), RevealTo::kBoth);
  });
  CHECK(max_abs_diff(a.first, x) <= 1.0 / 65536);
}

TEST_CASE("batch norm") {
  std::mt19937_64 rng(4);
  const RingTensor x = uniform(rng, {2, 3, 4, 4}, -3, 3);
  auto run_bn = [&](const RingTensor& in, const RingTensor& gamma, const RingTensor& beta,
                    const RingTensor& mean, const RingTensor& var, double eps) {
    auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
      const SecBatchNorm p{from_p1(ctx, gamma), from_p1(ctx, beta), from_p1(ctx, mean),
                           from_p1(ctx, var), eps};
      return *reveal(ctx, sec_batchnorm(ctx, from_p0(ctx, in), p), RevealTo::kBoth);
    });
    return a.first;
  };
  SUBCASE("unit parameters are the identity") {
    const RingTensor ones({3}, encode(1)), zeros({3});
    CHECK(max_abs_diff(run_bn(x, ones, zeros, zeros, ones, 0), x) <= 3 * 1e-2);
  }
  SUBCASE("constant input at the mean gives beta") {
    const RingTensor c({1, 3, 2, 2}, encode(1.25));
    const RingTensor beta = enc({0.5, -1, 2}, {3});
    const RingTensor y = run_bn(c, enc({2, 3, 0.5}, {3}), beta, RingTensor({3}, encode(1.25)),
                                enc({0.5, 2, 9}, {3}), 1e-5);
    for (std::size_t i = 0; i < y.size(); ++i)
      CHECK(std::abs(decode(y[i]) - decode(beta[i / 4])) <= 1e-3);
  }
  SUBCASE("random per-channel parameters against the formula") {
    const RingTensor gamma = uniform(rng, {3}, 0.5, 2), beta = uniform(rng, {3}, -1, 1);
    const RingTensor mean = uniform(rng, {3}, -1, 1), var = uniform(rng, {3}, 0.1, 4);
    const RingTensor y = run_bn(x, gamma, beta, mean, var, 1e-5);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const std::size_t c = (i / 16) % 3;
      const double want = decode(gamma[c]) * (decode(x[i]) - decode(mean[c])) /
                              std::sqrt(decode(var[c]) + 1e-5) +
                          decode(beta[c]);
      CHECK(std::abs(decode(y[i]) - want) <= 3e-2 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("global average pooling") {
  std::mt19937_64 rng(5);
  auto gap = [](const RingTensor& x) {
    auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
      return *reveal(ctx, sec_gap(ctx, from_p0(ctx, x)), RevealTo::kBoth);
    });
    return a.first;
  };
  const RingTensor c({1, 4, 1, 7}, encode(-2.5));
  CHECK(max_abs_diff(gap(c), RingTensor({1, 4}, encode(-2.5))) <= 2.0 / 65536 + 17.5 * std::ldexp(1.0, -17));

  const RingTensor x = uniform(rng, {1, 32, 1, 321}, -4, 4);
  const RingTensor y = gap(x);
  REQUIRE(y.shape() == Shape{1, 32});
  for (std::size_t ch = 0; ch < 32; ++ch) {
    double s = 0;
    for (std::size_t k = 0; k < 321; ++k) s += decode(x[ch * 321 + k]);
    // one truncation plus the encoding error of 1/321 scaled by the sum
    CHECK(std::abs(decode(y[ch]) - s / 321) <= 2.0 / 65536 + std::abs(s) * std::ldexp(1.0, -17));
  }
}

TEST_CASE("fully connected layer") {
  std::mt19937_64 rng(6);
  const RingTensor x = uniform(rng, {1, 32}, -2, 2);
  const RingTensor w0({32, 2});
  const RingTensor bias = enc({0.75, -1.5}, {2});
  const RingTensor w = uniform(rng, {32, 2}, -1, 1);
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const ArithShare sx = from_p0(ctx, x);
    const ArithShare zero = sec_fc(ctx, sx, from_p1(ctx, w0), from_p1(ctx, bias));
    const ArithShare full = sec_fc(ctx, sx, from_p1(ctx, w), from_p1(ctx, bias));
    return std::make_pair(*reveal(ctx, zero, RevealTo::kBoth), *reveal(ctx, full, RevealTo::kBoth));
  });
  CHECK(a.first.first.shape() == Shape{1, 2});
  CHECK(max_abs_diff(a.first.first, enc({0.75, -1.5}, {1, 2})) <= 1.0 / 65536);
  const RingTensor want = ring_add(ring_trunc(ring_matmul(x, w), 16), enc({0.75, -1.5}, {1, 2}));
  CHECK(max_abs_diff(a.first.second, want) <= 1.0 / 65536);
}

TEST_CASE("ConvBNSiLU on a toy 4-channel case") {
  std::mt19937_64 rng(7);
  const Shape xs{1, 2, 5, 5}, ws{4, 2, 3, 3};
  const RingTensor x = uniform(rng, xs, -1, 1), w = uniform(rng, ws, -0.5, 0.5);
  const RingTensor bias = uniform(rng, {4}, -0.2, 0.2), gamma = uniform(rng, {4}, 0.5, 1.5);
  const RingTensor beta = uniform(rng, {4}, -0.5, 0.5), mean = uniform(rng, {4}, -0.2, 0.2);
  const RingTensor var = uniform(rng, {4}, 0.5, 2);
  Transcript t_toy, t_zero;
  auto run = [&](const RingTensor& wt, Transcript* t) {
    auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
      SecCbs p{{from_p1(ctx, wt), from_p1(ctx, bias), {1, 1, 1, 1}},
               SecBatchNorm{from_p1(ctx, gamma), from_p1(ctx, beta), from_p1(ctx, mean),
                            from_p1(ctx, var), 1e-5}};
      const ArithShare sx = from_p0(ctx, x);
      const std::uint64_t r0 = ctx.transcript().rounds;
      const ArithShare y = sec_convbnsilu(ctx, sx, p);
      Transcript tr = ctx.transcript();
      tr.rounds -= r0;
      return std::make_pair(*reveal(ctx, y, RevealTo::kBoth), tr);
    });
    *t = a.first.second;
    return a.first.first;
  };
  const RingTensor y = run(w, &t_toy);
  const auto ref = conv_ref(x.decode(), xs, w.decode(), ws, bias.decode(), 1);
  REQUIRE(y.size() == ref.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t c = i / 25;
    const double bn = decode(gamma[c]) * (ref[i] - decode(mean[c])) /
                          std::sqrt(decode(var[c]) + 1e-5) +
                      decode(beta[c]);
    CHECK(std::abs(decode(y[i]) - silu_ref(bn)) <= 3e-2);
  }
  // Zero conv weights: silu(bn(bias)) everywhere, and the same round count.
  const RingTensor yz = run(RingTensor(ws), &t_zero);
  for (std::size_t i = 0; i < yz.size(); ++i) {
    const std::size_t c = i / 25;
    const double bn = decode(gamma[c]) * (decode(bias[c]) - decode(mean[c])) /
                          std::sqrt(decode(var[c]) + 1e-5) +
                      decode(beta[c]);
    CHECK(std::abs(decode(yz[i]) - silu_ref(bn)) <= 3e-2);
  }
  CHECK(t_toy.rounds == t_zero.rounds);
}

TEST_CASE("bottleneck 1 adds the residual for free") {
  std::mt19937_64 rng(8);
  const RingTensor x = uniform(rng, {1, 2, 4, 4}, -1, 1);
  std::vector<RingTensor> params;
  for (int k = 0; k < 2; ++k) {
    params.push_back(uniform(rng, {2, 2, k ? 3u : 1u, k ? 3u : 1u}, -0.5, 0.5));
    params.push_back(uniform(rng, {2}, -0.1, 0.1));
  }
  auto run = [&](bool residual) {
    auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
      const ConvGeometry g1{}, g3{1, 1, 1, 1};
      const SecCbs p0{{from_p1(ctx, params[0]), from_p1(ctx, params[1]), g1}, std::nullopt};
      const SecCbs p1{{from_p1(ctx, params[2]), from_p1(ctx, params[3]), g3}, std::nullopt};
      const ArithShare sx = from_p0(ctx, x);
      const Transcript before = ctx.transcript();
      const ArithShare y = residual ? sec_bottleneck1(ctx, sx, p0, p1) : sec_bottleneck2(ctx, sx, p0, p1);
      const Transcript after = ctx.transcript();
      return std::make_tuple(*reveal(ctx, y, RevealTo::kBoth), after.rounds - before.rounds,
                             after.bytes() - before.bytes());
    });
    return a.first;
  };
  const auto [y1, r1, b1] = run(true);
  const auto [y2, r2, b2] = run(false);
  CHECK(r1 == r2);
  CHECK(b1 == b2);
  CHECK(max_abs_diff(ring_sub(y1, y2), x) <= 4.0 / 65536);

  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const SecCbs p{{from_p1(ctx, params[0]), from_p1(ctx, params[1]), {}}, std::nullopt};
    const RingTensor wide = uniform(rng, {1, 3, 4, 4}, -1, 1);
    // 3 input channels against a 2-channel block: the residual cannot be added.
    const SecCbs q{{from_p1(ctx, uniform(rng, {2, 3, 1, 1}, -1, 1)), from_p1(ctx, params[1]), {}},
                   std::nullopt};
    bool threw = false;
    try {
      sec_bottleneck1(ctx, from_p0(ctx, wide), q, p);
    } catch (const ShapeError&) {
      threw = true;
    }
    return threw;
  });
  CHECK(a.first);
}

TEST_CASE("C3 needs 2n+3 parameter sets") {
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const RingTensor x({1, 2, 2, 2});
    std::vector<SecCbs> sets(4);
    bool threw = false;
    try {
      sec_c3(ctx, from_p0(ctx, x), sets, 1, true);
    } catch (const GraphError&) {
      threw = true;
    }
    return threw;
  });
  CHECK(a.first);
}

TEST_CASE("secure C3, SPPF and Concat graph agrees with the oracle") {
  const ModelGraph g = parse_manifest(R"({"input":[4,8,8],"init":"fan_in","layers":[
      {"kind":"C3","name":"c","in":4,"out":4,"n":1,"shortcut":false},
      {"kind":"SPPF","name":"s","in":4,"out":4,"k":5},
      {"kind":"Upsample"},
      {"kind":"ConvBNSiLU","name":"d","in":4,"out":4,"kernel":[3,3],"stride":[2,2],"pad":[1,1]},
      {"kind":"Concat","from":[-1,1]}]})");
  CHECK(g.output_shape(1) == Shape{1, 8, 8, 8});
  const WeightSet w = synth_weights(g, 9);
  const RingTensor x = synth_input(g, 1, 10);
  ForwardTrace ot, st, st1;
  const RingTensor want = oracle_forward(g, w, x, {}, &ot);
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const SharedWeights sw = share_weights(ctx, g, ctx.is_p0() ? nullptr : &w);
    ForwardTrace* tr = ctx.is_p0() ? &st : &st1;
    return *reveal(ctx, secure_forward(ctx, g, sw, from_p0(ctx, x), {}, tr), RevealTo::kBoth);
  });
  CHECK(max_abs_diff(a.first, want) <= 3e-2);
  CHECK(ot.all_verified());
  CHECK(st.all_verified());
  CHECK(st1.all_verified());
  CHECK(st.layer_shapes == ot.layer_shapes);
  CHECK_FALSE(st.reads.empty());
}

TEST_CASE("SPPF keeps a constant input constant") {
  // With identity stems the fuse conv sees four copies of the input.
  const ModelGraph g = parse_manifest(R"({"input":[2,6,6],"layers":[
      {"kind":"SPPF","name":"s","in":2,"out":2,"k":5}]})");
  WeightSet w = synth_weights(g, 1);
  for (auto& [name, t] : w) {
    if (name.ends_with(".gamma") || name.ends_with(".var")) t = RingTensor(t.shape(), encode(1));
    else t = RingTensor(t.shape());
  }
  // Stem: 2 -> 1 channel summing half of each input; fuse: 4 -> 2 averaging.
  w["s.0.w"] = RingTensor(w["s.0.w"].shape(), encode(0.5));
  w["s.1.w"] = RingTensor(w["s.1.w"].shape(), encode(0.25));
  const RingTensor x({1, 2, 6, 6}, encode(2));
  const RingTensor y = oracle_forward(g, w, x);
  CHECK(y.shape() == Shape{1, 2, 6, 6});
  const double s2 = silu_ref(2.0), want = silu_ref(s2);  // silu(bn(conv)) twice
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(decode(y[i]) - want) <= 3e-2);
}

TEST_CASE("CompactCNN secure forward matches the oracle") {
  const ModelGraph g = compactcnn();
  const WeightSet w = synth_weights(g, 11);
  const RingTensor x = synth_input(g, 3, 12);
  const RingTensor want = oracle_forward(g, w, x);
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const SharedWeights sw = share_weights(ctx, g, ctx.is_p0() ? nullptr : &w);
    return *reveal(ctx, secure_forward(ctx, g, sw, from_p0(ctx, x)), RevealTo::kBoth);
  });
  CHECK(a.first.shape() == Shape{3, 2});
  CHECK(max_abs_diff(a.first, want) <= 1e-2);
}

TEST_CASE("YOLO micro: residual reads are verified and outputs match") {
  const ModelGraph g = yolo();
  const WeightSet w = synth_weights(g, 13);
  const RingTensor x = synth_input(g, 1, 14);
  ForwardTrace ot, st, st1;
  const RingTensor want = oracle_forward(g, w, x, {}, &ot);
  CHECK(ot.all_verified());
  auto [a, b] = run_two_party([&](ProtocolCtx& ctx) {
    const SharedWeights sw = share_weights(ctx, g, ctx.is_p0() ? nullptr : &w);
    ForwardTrace* tr = ctx.is_p0() ? &st : &st1;
    return *reveal(ctx, secure_forward(ctx, g, sw, from_p0(ctx, x), {}, tr), RevealTo::kBoth);
  });
  CHECK(st.all_verified());
  CHECK(st1.all_verified());
  CHECK(st.reads.size() == ot.reads.size());
  CHECK(max_abs_diff(a.first, want) <= 5e-2);
}

TEST_CASE("folding batch norm preserves the function") {
  for (const ModelGraph& g : {compactcnn(), yolo()}) {
    const WeightSet w = synth_weights(g, 15);
    const RingTensor x = synth_input(g, 1, 16);
    const auto [fg, fw] = fold_batchnorm(g, w);
    CHECK_NOTHROW(check_weights(fg, fw));
    CHECK(fg.fingerprint() == folded_structure(g).fingerprint());
    CHECK(fg.fingerprint() != g.fingerprint());
    CHECK(max_abs_diff(oracle_forward(fg, fw, x), oracle_forward(g, w, x)) <= 5e-2);
  }
}

TEST_CASE("activation swap") {
  const ModelGraph g = with_activation(compactcnn(), LayerKind::kELU);
  CHECK(g.layers[2].kind == LayerKind::kELU);
  CHECK(g.fingerprint() != compactcnn().fingerprint());
}

TEST_CASE("weights round trip through RTF1 files") {
  const ModelGraph g = compactcnn();
  const WeightSet w = synth_weights(g, 17);
  const auto dir = std::filesystem::temp_directory_path() / "mpcnn_test_nn_weights";
  std::filesystem::remove_all(dir);
  save_weights(w, dir);
  const WeightSet back = load_weights(g, dir);
  // RTF1 stores float32, so values come back within float rounding.
  for (const auto& [name, t] : w) CHECK(max_abs_diff(back.at(name), t) <= 1e-4);
  WeightSet missing = w;
  missing.erase("fc.b");
  CHECK_THROWS_AS(check_weights(g, missing), GraphError);
  WeightSet wrong = w;
  wrong["fc.b"] = RingTensor({3});
  CHECK_THROWS_AS(check_weights(g, wrong), GraphError);
  std::filesystem::remove_all(dir);
}
