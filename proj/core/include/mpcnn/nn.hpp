#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mpcnn/approx.hpp"
#include "mpcnn/ring.hpp"
#include "mpcnn/sharing.hpp"

namespace mpcnn {

enum class LayerKind {
  kConv2D,
  kConvBNSiLU,
  kBatchNorm,
  kReLU,
  kELU,
  kC3,
  kSPPF,
  kConcat,
  kUpsample,
  kGAP,
  kFC,
  kLogSoftmax,
  kDetect,
};

const char* layer_kind_name(LayerKind k);
LayerKind parse_layer_kind(std::string_view s);

// Tensors are N x C x H x W throughout; GAP produces N x C, FC consumes it.
struct LayerSpec {
  LayerKind kind = LayerKind::kReLU;
  std::string name;       // weight-name prefix
  std::vector<int> from;  // source layers; -1 is the previous one, empty means {-1}
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1, kernel_w = 1;
  ConvGeometry geom;
  std::size_t depth = 1;  // C3 bottleneck count
  bool shortcut = true;   // C3: residual bottlenecks
  std::size_t pool = 5;   // SPPF kernel
  double eps = 1e-5;
  std::size_t anchors = 3, outputs = 85;  // Detect
  bool folded = false;    // batch norm folded into the preceding conv / scale-shift form
};

enum class WeightInit { kUnit, kFanIn };

struct ModelGraph {
  std::string name;
  Shape input;  // per sample, C x H x W
  std::vector<LayerSpec> layers;
  WeightInit init = WeightInit::kUnit;
  double input_lo = -1.0, input_hi = 1.0;

  // Resolved source layer indices of layer i; -1 denotes the graph input.
  std::vector<int> sources(std::size_t i) const;
  // source layer -> layers that read it other than its immediate successor.
  std::map<int, std::vector<int>> residual_table() const;
  // Output shape of every layer for a batch of n. Throws GraphError.
  std::vector<Shape> infer_shapes(std::size_t batch = 1) const;
  Shape output_shape(std::size_t batch = 1) const;
  std::vector<std::pair<std::string, Shape>> weight_specs() const;
  std::uint64_t fingerprint() const;
  std::string to_json() const;
};

ModelGraph parse_manifest(std::string_view json_text);
ModelGraph load_manifest(const std::filesystem::path& path);

using WeightSet = std::map<std::string, RingTensor, std::less<>>;
using SharedWeights = std::map<std::string, ArithShare, std::less<>>;

// One RTF1 file per tensor: <dir>/<name>.rtf1.
WeightSet load_weights(const ModelGraph& g, const std::filesystem::path& dir,
                       const FixedPointConfig& fp = {});
void save_weights(const WeightSet& w, const std::filesystem::path& dir,
                  const FixedPointConfig& fp = {});
// Throws GraphError on a missing or misshaped tensor.
void check_weights(const ModelGraph& g, const WeightSet& w);

WeightSet synth_weights(const ModelGraph& g, std::uint64_t seed, const FixedPointConfig& fp = {});
RingTensor synth_input(const ModelGraph& g, std::size_t batch, std::uint64_t seed,
                       const FixedPointConfig& fp = {});

// Plaintext fold of every batch norm: conv weights absorb gamma/sqrt(var+eps)
// and the bias absorbs the shift; standalone BN becomes scale/shift.
std::pair<ModelGraph, WeightSet> fold_batchnorm(const ModelGraph& g, const WeightSet& w,
                                                const FixedPointConfig& fp = {});
// The graph part of fold_batchnorm; weights are not needed.
ModelGraph folded_structure(const ModelGraph& g);
// Replace every ReLU/ELU layer by `act`.
ModelGraph with_activation(const ModelGraph& g, LayerKind act);
// "relu" or "elu" (any case).
LayerKind parse_activation(std::string_view s);

struct ResidualRead {
  int consumer = 0;
  int source = 0;
  Shape recorded;
  Shape read;
  bool same_data = false;

  bool ok() const { return recorded == read && same_data; }
};

struct ForwardTrace {
  std::vector<Shape> layer_shapes;
  std::vector<ResidualRead> reads;

  bool all_verified() const;
};

struct ForwardOptions {
  ApproxConfig approx;
  FixedPointConfig fp;
};

RingTensor oracle_forward(const ModelGraph& g, const WeightSet& w, const RingTensor& x,
                          const ForwardOptions& opt = {}, ForwardTrace* trace = nullptr);

// P1 supplies `w`; P0 passes nullptr. Sharing is PRZS based and needs no messages.
SharedWeights share_weights(ProtocolCtx& ctx, const ModelGraph& g, const WeightSet* w);
ArithShare secure_forward(ProtocolCtx& ctx, const ModelGraph& g, const SharedWeights& w,
                          const ArithShare& x, const ApproxConfig& cfg = {},
                          ForwardTrace* trace = nullptr);

// Individual secure layers.
struct SecConv {
  ArithShare w, b;
  ConvGeometry geom;
};
struct SecBatchNorm {
  ArithShare gamma, beta, mean, var;
  double eps = 1e-5;
};
struct SecCbs {
  SecConv conv;
  std::optional<SecBatchNorm> bn;  // absent when folded
};

ArithShare sec_conv(ProtocolCtx& ctx, const ArithShare& x, const SecConv& p);
ArithShare sec_batchnorm(ProtocolCtx& ctx, const ArithShare& x, const SecBatchNorm& p,
                         const ApproxConfig& cfg = {});
ArithShare sec_gap(ProtocolCtx& ctx, const ArithShare& x);
ArithShare sec_fc(ProtocolCtx& ctx, const ArithShare& x, const ArithShare& w, const ArithShare& b);
ArithShare sec_convbnsilu(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p,
                          const ApproxConfig& cfg = {});
ArithShare sec_bottleneck1(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p0,
                           const SecCbs& p1, const ApproxConfig& cfg = {});
ArithShare sec_bottleneck2(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p0,
                           const SecCbs& p1, const ApproxConfig& cfg = {});
// sets has 2n+3 entries in the C3 index order.
ArithShare sec_c3(ProtocolCtx& ctx, const ArithShare& x, const std::vector<SecCbs>& sets,
                  std::size_t n, bool shortcut, const ApproxConfig& cfg = {});
ArithShare sec_sppf(ProtocolCtx& ctx, const ArithShare& x, const SecCbs& p0, const SecCbs& p1,
                    std::size_t pool = 5, const ApproxConfig& cfg = {});

}  // namespace mpcnn
