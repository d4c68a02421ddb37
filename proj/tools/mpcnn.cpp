// mpcnn: party, dealer, benchmark and weight-synthesis entry points.

#include <signal.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpcnn/harness.hpp"
#include "mpcnn/nn.hpp"
#include "mpcnn/protocols.hpp"
#include "mpcnn/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace mpcnn;

namespace {

struct PartyArgs {
  std::string role = "local";
  std::string input;
  std::string model;
  std::string weights_dir;
  std::string output;
  std::string transcript;
  std::string p0_addr = "127.0.0.1:7400";
  std::string p1_addr = "127.0.0.1:7401";
  std::string dealer_addr = "127.0.0.1:7402";
  std::uint64_t session = 1;
  std::size_t batch = 0;
  std::uint64_t seed = 1;
  bool pre_deal = false;
  bool secure_logsoftmax = false;
  bool fold_bn = false;
  bool check = false;
  std::string activation;
  std::vector<std::string> approx;
};

// Blocks SIGINT/SIGTERM in every thread so the main thread can sigwait.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

// Runs until SIGINT/SIGTERM, or until `exit_after` party connections have
// closed when that is nonzero.
int serve_dealer(const std::string& addr, std::size_t exit_after = 0) {
  const sigset_t set = block_stop_signals();
  Dealer dealer;
  DealerServer server(dealer, parse_endpoint(addr));
  std::cerr << "dealer listening on 127.0.0.1:" << server.port() << std::endl;
  const timespec tick{0, 100'000'000};
  while (sigtimedwait(&set, nullptr, &tick) < 0)
    if (exit_after && server.finished() >= exit_after) break;
  server.stop();
  return 0;
}

void append_transcript(const std::string& path, const Transcript& t) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write transcript " + path);
  out << transcript_json_line(t) << '\n';
}

void print_result(Workload w, const PartyOutcome& o, const PartyArgs& a,
                  const FixedPointConfig& fp) {
  const RingTensor& y = *o.output;
  if (w == Workload::kDrowsy) {
    std::cout << "classes:";
    for (int c : o.classes) std::cout << ' ' << c;
    std::cout << '\n';
  }
  std::cout << "output " << shape_str(y.shape()) << ", rounds " << o.transcript.rounds
            << ", bytes " << o.transcript.bytes() << ", wall " << o.wall_ms << " ms\n";
  if (!a.output.empty()) write_rtf1(a.output, decode_ring(y, fp));
}

int run_workload(Workload w, const PartyArgs& a) {
  ProtocolOptions opt;
  for (const auto& kv : a.approx) opt.approx.set(kv);
  opt.approx.validate(opt.fp);
  opt.mode = a.pre_deal ? RandMode::kPreDeal : RandMode::kInline;
  opt.secure_logsoftmax = a.secure_logsoftmax;
  opt.fold_bn = a.fold_bn;
  if (a.secure_logsoftmax && w != Workload::kDrowsy)
    throw CLI::ValidationError("--secure-logsoftmax applies to drowsy only");

  if (a.role == "dealer") return serve_dealer(a.dealer_addr);

  ModelGraph g = load_manifest(a.model.empty() ? default_model_path(w) : fs::path(a.model));
  if (!a.activation.empty()) {
    if (w != Workload::kDrowsy) throw CLI::ValidationError("--activation applies to drowsy only");
    g = with_activation(g, parse_activation(a.activation));
  }

  std::optional<RingTensor> input;
  std::size_t batch = a.batch;
  if (a.role == "p0" || a.role == "local") {
    if (!a.input.empty()) {
      input = load_rtf1(a.input, opt.fp);
      if (input->shape().size() == g.input.size()) {
        Shape s{1};
        s.insert(s.end(), input->shape().begin(), input->shape().end());
        input = input->reshaped(s);
      }
    } else {
      input = synth_input(g, batch ? batch : 1, a.seed ^ 0x9e3779b97f4a7c15ULL, opt.fp);
    }
    if (batch && input->shape().at(0) != batch)
      throw CLI::ValidationError("--batch disagrees with the input's leading dimension");
    batch = input->shape().at(0);
  }
  if (!batch) batch = 1;

  std::optional<WeightSet> weights;
  if (a.role == "p1" || a.role == "local")
    weights = a.weights_dir.empty() ? synth_weights(g, a.seed, opt.fp)
                                    : load_weights(g, a.weights_dir, opt.fp);

  const SessionPlan plan = make_plan(w, g, batch, opt);

  if (a.role == "local") {
    Dealer dealer;
    const TwoPartyResult r = run_inproc(dealer, a.session, plan, *input, *weights);
    print_result(w, r.p0, a, opt.fp);
    append_transcript(a.transcript, r.p0.transcript);
    if (a.check) {
      ForwardOptions fo{opt.approx, opt.fp};
      RingTensor ref = oracle_forward(g, *weights, *input, fo);
      if (w == Workload::kDrowsy && opt.secure_logsoftmax)
        ref = fxp::log_softmax(ref, opt.fp, opt.approx);
      double err = 0;
      const auto got = r.p0.output->decode(opt.fp), want = ref.decode(opt.fp);
      for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got[i] - want[i]));
      std::cout << "max abs error vs fixed-point oracle: " << err << '\n';
    }
    return r.p0.audit.ok(opt.mode) && r.p1.audit.ok(opt.mode) ? 0 : 3;
  }

  const auto timeout = default_timeout();
  const PartyId self = a.role == "p0" ? PartyId::kP0 : PartyId::kP1;
  std::unique_ptr<Link> link;
  if (self == PartyId::kP1) {
    TcpListener listener(parse_endpoint(a.p1_addr));
    link = listener.accept(timeout);
  } else {
    link = tcp_connect(parse_endpoint(a.p1_addr), timeout);
  }
  Channel ch(a.session, self, std::move(link));
  TcpDealerClient dealer(tcp_connect(parse_endpoint(a.dealer_addr), timeout), a.session, self);
  PartyInputs in;
  if (self == PartyId::kP0) in.input = &*input;
  else in.weights = &*weights;
  const PartyOutcome o = run_party(ch, dealer, plan, in);
  ch.close();
  append_transcript(a.transcript, o.transcript);
  if (self == PartyId::kP0) print_result(w, o, a, opt.fp);
  else
    std::cout << "p1 done, rounds " << o.transcript.rounds << ", bytes " << o.transcript.bytes()
              << '\n';
  return o.audit.ok(opt.mode) ? 0 : 3;
}

void add_party_options(CLI::App* app, PartyArgs& a, bool image) {
  app->add_option("--role", a.role, "p0 | p1 | dealer | local (both parties in-process)")
      ->check(CLI::IsMember({"p0", "p1", "dealer", "local"}));
  app->add_option(image ? "--image,--input" : "--input", a.input,
                  "P0's RTF1 input; synthesized from --seed when absent");
  app->add_option("--model", a.model, "model manifest (default: bundled)");
  app->add_option("--weights-dir", a.weights_dir,
                  "P1's weights, one RTF1 per tensor; synthesized from --seed when absent");
  app->add_option("--output", a.output, "P0 writes the revealed output here (RTF1)");
  app->add_option("--transcript", a.transcript, "append this party's transcript as a JSON line");
  app->add_option("--p0-addr", a.p0_addr,
                  "P0's address; P0 dials P1, so this is informational");
  app->add_option("--p1-addr", a.p1_addr, "address P1 listens on");
  app->add_option("--dealer-addr", a.dealer_addr, "dealer address");
  app->add_option("--session", a.session, "session id shared by both parties and the dealer");
  app->add_option("--batch", a.batch, "public batch size (P1 needs it; P0 reads it from input)");
  app->add_option("--seed", a.seed, "seed for synthesized inputs and weights");
  app->add_flag("--pre-deal", a.pre_deal, "fetch all correlated randomness before the online phase");
  app->add_flag("--fold-bn", a.fold_bn, "fold batch norm into the preceding conv (P1-local)");
  app->add_option("--approx", a.approx, "approximation parameter key=value (repeatable)");
  app->add_flag("--check", a.check, "local role: compare with the plaintext fixed-point oracle");
  if (!image) {
    app->add_flag("--secure-logsoftmax", a.secure_logsoftmax,
                  "apply log-softmax under MPC before the reveal");
    app->add_option("--activation", a.activation, "relu (default) or elu")
        ->check(CLI::IsMember({"relu", "elu"}, CLI::ignore_case));
  }
}

int run_bench(const std::string& kind, const std::string& spec_path, const std::string& out,
              std::string format, std::optional<std::size_t> workers) {
  ExperimentSpec spec = ExperimentSpec::load(spec_path);
  spec.kind = kind;
  if (workers) spec.workers = *workers;
  if (format.empty()) format = fs::path(out).extension() == ".csv" ? "csv" : "json";
  const ReportFormat fmt = parse_report_format(format);

  const std::vector<RunReport> reports = run_experiment(spec);
  const std::vector<AssertionResult> checks = evaluate_assertions(spec, reports);

  for (const auto& r : reports) {
    std::printf("%-34s sessions=%zu mean=%.2fms p50=%.2fms p90=%.2fms", r.label.c_str(),
                r.sessions.size(), r.mean_ms, r.p50_ms, r.p90_ms);
    if (!r.sessions.empty())
      std::printf(" rounds=%llu MB=%.3f", static_cast<unsigned long long>(r.sessions[0].rounds),
                  static_cast<double>(r.sessions[0].bytes) / 1e6);
    std::printf("%s\n", r.errors.empty() ? "" : " ERRORS");
    for (const auto& e : r.errors) std::printf("  error: %s\n", e.c_str());
  }
  bool ok = true;
  for (const auto& c : checks) {
    const char* verdict = !c.applicable ? "N/A" : c.passed ? "PASS" : "FAIL";
    std::printf("[%s] %s: %s\n", verdict, c.name.c_str(), c.detail.c_str());
    if (c.applicable && !c.passed) ok = false;
  }
  if (!out.empty()) export_report(reports, out, fmt, checks);
  return ok ? 0 : 1;
}

int run_synth(Workload w, const std::string& model, const std::string& weights_dir,
              const std::string& input, std::size_t batch, std::uint64_t seed) {
  const ModelGraph g = load_manifest(model.empty() ? default_model_path(w) : fs::path(model));
  const FixedPointConfig fp;
  if (!weights_dir.empty()) save_weights(synth_weights(g, seed, fp), weights_dir, fp);
  if (!input.empty())
    write_rtf1(input, decode_ring(synth_input(g, batch, seed ^ 0x9e3779b97f4a7c15ULL, fp), fp));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-party secure CNN inference with a trusted dealer"};
  app.require_subcommand(1);

  std::string listen = "127.0.0.1:7402";
  auto* dealer_cmd = app.add_subcommand("dealer", "run the correlated-randomness dealer");
  dealer_cmd->add_option("--listen", listen, "address to listen on");
  std::size_t exit_after = 0;
  dealer_cmd->add_option("--exit-after", exit_after,
                         "exit once this many party connections have closed (0: run until signalled)");

  PartyArgs drowsy_args, yolo_args;
  auto* drowsy_cmd = app.add_subcommand("drowsy", "CompactCNN drowsiness classification");
  add_party_options(drowsy_cmd, drowsy_args, false);
  auto* yolo_cmd = app.add_subcommand("yolo", "YOLOv5-micro detection forward pass");
  add_party_options(yolo_cmd, yolo_args, true);

  auto* bench_cmd = app.add_subcommand("bench", "run an experiment spec");
  bench_cmd->require_subcommand(1);
  std::string spec_path, out, format;
  std::optional<std::size_t> workers;
  for (const char* k : {"single", "sweep", "multi"}) {
    auto* sub = bench_cmd->add_subcommand(k, std::string(k) + " experiment");
    sub->add_option("--spec", spec_path, "experiment spec (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "report path");
    sub->add_option("--format", format, "json | csv (default: from --out extension)")
        ->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--workers", workers, "concurrent agent sessions (0: one per agent)");
  }

  std::string synth_workload = "drowsy", synth_model, synth_weights_dir, synth_input_path;
  std::size_t synth_batch = 1;
  std::uint64_t synth_seed = 1;
  auto* synth_cmd = app.add_subcommand("synth", "write synthetic weights and inputs");
  synth_cmd->add_option("workload", synth_workload, "drowsy | yolo")
      ->check(CLI::IsMember({"drowsy", "yolo"}));
  synth_cmd->add_option("--model", synth_model, "model manifest (default: bundled)");
  synth_cmd->add_option("--weights-dir", synth_weights_dir, "directory for weight tensors");
  synth_cmd->add_option("--input", synth_input_path, "RTF1 path for a synthetic input batch");
  synth_cmd->add_option("--batch", synth_batch, "input batch size")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dealer_cmd) return serve_dealer(listen, exit_after);
    if (*drowsy_cmd) return run_workload(Workload::kDrowsy, drowsy_args);
    if (*yolo_cmd) return run_workload(Workload::kYolo, yolo_args);
    if (*bench_cmd) {
      const std::string kind = bench_cmd->get_subcommands().front()->get_name();
      return run_bench(kind, spec_path, out, format, workers);
    }
    if (*synth_cmd)
      return run_synth(parse_workload(synth_workload), synth_model, synth_weights_dir,
                       synth_input_path, synth_batch, synth_seed);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "mpcnn: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
