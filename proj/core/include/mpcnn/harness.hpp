#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mpcnn/protocols.hpp"

namespace mpcnn {

inline constexpr int kReportSchemaVersion = 1;

enum class Backend { kInproc, kTcp };
const char* backend_name(Backend b);

// Assertions a spec may embed; `mpcnn bench` exits nonzero if one fails.
struct SpecAssertions {
  std::optional<double> max_latency_ratio;  // multi: drowsy-only latency(n_max) / latency(1)
  std::size_t min_cores = 4;                // precondition for max_latency_ratio
  bool rounds_constant = false;             // sweep: session rounds equal across batch sizes
  std::optional<double> bytes_linear_r2;    // sweep: linear fit of bytes vs batch size
  bool monotone_image_size = false;         // sweep: wall time nondecreasing in image size
  bool isolation = false;                   // multi: per-agent counters equal the solo run
  bool audit = true;                        // every session consumed exactly its budget
};

struct ExperimentSpec {
  std::string kind = "single";  // single | sweep | multi
  Workload workload = Workload::kDrowsy;
  std::string drowsy_model;  // manifest paths; empty means the bundled ones
  std::string yolo_model;
  std::size_t batch = 1;
  std::size_t image_size = 0;  // 0 keeps the manifest's input size
  std::size_t repetitions = 1;
  Backend backend = Backend::kInproc;
  ProtocolOptions options;
  std::string activation;  // drowsy: relu (manifest default) or elu
  std::uint64_t seed = 1;
  std::size_t workers = 0;  // 0: one per agent
  std::vector<std::size_t> sweep_batch;
  std::vector<std::size_t> sweep_image_size;
  std::vector<std::size_t> n_agents;
  std::vector<double> drowsy_fractions;
  SpecAssertions assertions;

  static ExperimentSpec from_json(std::string_view text);
  static ExperimentSpec load(const std::filesystem::path& path);
  std::string to_json() const;
};

// Counts an agent mix: floor(fraction * n) drowsy agents, the rest yolo.
std::pair<std::size_t, std::size_t> agent_mix(std::size_t n, double drowsy_fraction);

struct SessionRecord {
  std::string workload;
  std::size_t agent = 0;
  std::size_t repetition = 0;
  std::size_t batch = 1;
  std::size_t image_size = 0;
  std::string backend;
  std::string mode;
  double wall_ms = 0;
  double cpu_ms = 0;
  std::uint64_t rounds = 0;
  std::uint64_t bytes = 0;  // P0's party-to-party payload, both directions
  std::uint64_t header_bytes = 0;
  std::uint64_t dealer_bytes = 0;
  std::uint64_t messages = 0;
  double per_input_rounds = 0;
  double per_input_bytes = 0;
  double per_input_ms = 0;
  bool audit_ok = false;
  bool isolated = true;  // counters equal the solo baseline (multi only)
};

struct RunReport {
  std::string label;
  std::string kind;
  std::size_t n_agents = 1;
  double drowsy_fraction = 1.0;
  std::vector<SessionRecord> sessions;
  std::vector<std::string> errors;  // per-agent failures
  double mean_ms = 0, p50_ms = 0, p90_ms = 0, p99_ms = 0;

  void summarize();
};

struct AssertionResult {
  std::string name;
  bool passed = true;
  bool applicable = true;
  std::string detail;
};

// Builds the plan, weights and input of one session of a spec.
struct SessionSetup {
  SessionPlan plan;
  WeightSet weights;
  RingTensor input;
};
SessionSetup prepare_session(const ExperimentSpec& spec, Workload w, std::size_t batch,
                             std::size_t image_size, std::uint64_t seed);
std::filesystem::path default_model_path(Workload w);

SessionRecord run_session(const ExperimentSpec& spec, const SessionSetup& s, Dealer& dealer,
                          std::uint64_t session, TwoPartyResult* raw = nullptr);

RunReport run_single(const ExperimentSpec& spec);
std::vector<RunReport> run_sweep(const ExperimentSpec& spec);
std::vector<RunReport> run_multi_agent(const ExperimentSpec& spec);
std::vector<RunReport> run_experiment(const ExperimentSpec& spec);

std::vector<AssertionResult> evaluate_assertions(const ExperimentSpec& spec,
                                                 const std::vector<RunReport>& reports);

enum class ReportFormat { kJson, kCsv };
ReportFormat parse_report_format(std::string_view s);
std::string report_json(const std::vector<RunReport>& reports,
                        const std::vector<AssertionResult>& assertions = {});
std::string report_csv(const std::vector<RunReport>& reports);
void export_report(const std::vector<RunReport>& reports, const std::filesystem::path& path,
                   ReportFormat format, const std::vector<AssertionResult>& assertions = {});
std::vector<RunReport> parse_report_json(std::string_view text);

// Least-squares fit quality of y against x.
double linear_r2(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace mpcnn
