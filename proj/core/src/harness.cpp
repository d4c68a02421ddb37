#include "mpcnn/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "mpcnn/errors.hpp"

#ifndef MPCNN_MODEL_DIR
#define MPCNN_MODEL_DIR "models"
#endif

namespace mpcnn {

using ojson = nlohmann::ordered_json;

const char* backend_name(Backend b) { return b == Backend::kTcp ? "tcp" : "inproc"; }

namespace {

Backend parse_backend(const std::string& s) {
  if (s == "inproc") return Backend::kInproc;
  if (s == "tcp") return Backend::kTcp;
  throw std::invalid_argument("unknown backend '" + s + "' (inproc|tcp)");
}

RandMode parse_mode(const std::string& s) {
  if (s == "inline") return RandMode::kInline;
  if (s == "pre-deal" || s == "predeal") return RandMode::kPreDeal;
  throw std::invalid_argument("unknown mode '" + s + "' (inline|pre-deal)");
}

std::string approx_value(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  throw std::invalid_argument("approx values must be numbers or strings");
}

template <class T>
std::vector<T> list_of(const nlohmann::json& j, const char* key) {
  if (!j.is_array()) throw std::invalid_argument(std::string(key) + " must be an array");
  return j.get<std::vector<T>>();
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }))
      throw std::invalid_argument(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

ExperimentSpec ExperimentSpec::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment spec: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("experiment spec must be a JSON object");
  check_keys(j,
             {"kind", "workload", "models", "batch", "image_size", "repetitions", "backend", "mode",
              "seed", "workers", "approx", "secure_logsoftmax", "fold_bn", "activation", "sweep",
              "multi", "assert"},
             "experiment spec");

  ExperimentSpec s;
  try {
    s.kind = j.value("kind", s.kind);
    if (s.kind != "single" && s.kind != "sweep" && s.kind != "multi")
      throw std::invalid_argument("kind must be single, sweep or multi");
    if (j.contains("workload")) s.workload = parse_workload(j["workload"].get<std::string>());
    if (j.contains("models")) {
      const auto& m = j["models"];
      check_keys(m, {"drowsy", "yolo"}, "models");
      s.drowsy_model = m.value("drowsy", "");
      s.yolo_model = m.value("yolo", "");
    }
    s.batch = j.value("batch", s.batch);
    s.image_size = j.value("image_size", s.image_size);
    s.repetitions = j.value("repetitions", s.repetitions);
    if (j.contains("backend")) s.backend = parse_backend(j["backend"].get<std::string>());
    if (j.contains("mode")) s.options.mode = parse_mode(j["mode"].get<std::string>());
    s.seed = j.value("seed", s.seed);
    s.workers = j.value("workers", s.workers);
    if (j.contains("approx")) {
      for (auto it = j["approx"].begin(); it != j["approx"].end(); ++it)
        s.options.approx.set(it.key(), approx_value(it.value()));
    }
    s.options.secure_logsoftmax = j.value("secure_logsoftmax", false);
    s.options.fold_bn = j.value("fold_bn", false);
    s.activation = j.value("activation", s.activation);
    if (j.contains("sweep")) {
      const auto& sw = j["sweep"];
      check_keys(sw, {"batch", "image_size"}, "sweep");
      if (sw.contains("batch")) s.sweep_batch = list_of<std::size_t>(sw["batch"], "sweep.batch");
      if (sw.contains("image_size"))
        s.sweep_image_size = list_of<std::size_t>(sw["image_size"], "sweep.image_size");
    }
    if (j.contains("multi")) {
      const auto& mu = j["multi"];
      check_keys(mu, {"n_agents", "drowsy_fractions"}, "multi");
      if (mu.contains("n_agents")) s.n_agents = list_of<std::size_t>(mu["n_agents"], "n_agents");
      if (mu.contains("drowsy_fractions"))
        s.drowsy_fractions = list_of<double>(mu["drowsy_fractions"], "drowsy_fractions");
    }
    if (j.contains("assert")) {
      const auto& a = j["assert"];
      check_keys(a,
                 {"max_latency_ratio", "min_cores", "rounds_constant", "bytes_linear_r2",
                  "monotone_image_size", "isolation", "audit"},
                 "assert");
      if (a.contains("max_latency_ratio"))
        s.assertions.max_latency_ratio = a["max_latency_ratio"].get<double>();
      s.assertions.min_cores = a.value("min_cores", s.assertions.min_cores);
      s.assertions.rounds_constant = a.value("rounds_constant", false);
      if (a.contains("bytes_linear_r2"))
        s.assertions.bytes_linear_r2 = a["bytes_linear_r2"].get<double>();
      s.assertions.monotone_image_size = a.value("monotone_image_size", false);
      s.assertions.isolation = a.value("isolation", false);
      s.assertions.audit = a.value("audit", true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment spec: ") + e.what());
  }

  if (s.batch == 0) throw std::invalid_argument("batch must be positive");
  if (s.repetitions == 0) throw std::invalid_argument("repetitions must be positive");
  for (double f : s.drowsy_fractions)
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("drowsy fractions must be in [0, 1]");
  for (std::size_t n : s.n_agents)
    if (n == 0) throw std::invalid_argument("n_agents entries must be positive");
  for (std::size_t b : s.sweep_batch)
    if (b == 0) throw std::invalid_argument("sweep batch sizes must be positive");
  s.options.approx.validate(s.options.fp);
  return s;
}

ExperimentSpec ExperimentSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open experiment spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ExperimentSpec::to_json() const {
  ojson j;
  j["kind"] = kind;
  j["workload"] = workload_name(workload);
  j["models"] = {{"drowsy", drowsy_model}, {"yolo", yolo_model}};
  j["batch"] = batch;
  j["image_size"] = image_size;
  j["repetitions"] = repetitions;
  j["backend"] = backend_name(backend);
  j["mode"] = rand_mode_name(options.mode);
  j["seed"] = seed;
  j["workers"] = workers;
  const ApproxConfig& a = options.approx;
  j["approx"] = {{"exp_iters", a.exp_iters},
                 {"newton_iters_recip", a.newton_iters_recip},
                 {"newton_iters_rsqrt", a.newton_iters_rsqrt},
                 {"exp_lo", a.exp_domain.lo},
                 {"exp_hi", a.exp_domain.hi},
                 {"recip_lo", a.recip_domain.lo},
                 {"recip_hi", a.recip_domain.hi},
                 {"rsqrt_lo", a.rsqrt_domain.lo},
                 {"rsqrt_hi", a.rsqrt_domain.hi},
                 {"log_lo", a.log_domain.lo},
                 {"log_hi", a.log_domain.hi}};
  j["secure_logsoftmax"] = options.secure_logsoftmax;
  j["fold_bn"] = options.fold_bn;
  j["activation"] = activation;
  j["sweep"] = {{"batch", sweep_batch}, {"image_size", sweep_image_size}};
  j["multi"] = {{"n_agents", n_agents}, {"drowsy_fractions", drowsy_fractions}};
  ojson as;
  if (assertions.max_latency_ratio) as["max_latency_ratio"] = *assertions.max_latency_ratio;
  as["min_cores"] = assertions.min_cores;
  as["rounds_constant"] = assertions.rounds_constant;
  if (assertions.bytes_linear_r2) as["bytes_linear_r2"] = *assertions.bytes_linear_r2;
  as["monotone_image_size"] = assertions.monotone_image_size;
  as["isolation"] = assertions.isolation;
  as["audit"] = assertions.audit;
  j["assert"] = as;
  return j.dump(2);
}

std::pair<std::size_t, std::size_t> agent_mix(std::size_t n, double drowsy_fraction) {
  if (!(drowsy_fraction >= 0.0 && drowsy_fraction <= 1.0))
    throw std::invalid_argument("drowsy fraction must be in [0, 1]");
  // A small epsilon keeps 0.75 * 12 at 9 despite binary rounding.
  auto d = static_cast<std::size_t>(std::floor(drowsy_fraction * static_cast<double>(n) + 1e-9));
  d = std::min(d, n);
  return {d, n - d};
}

void RunReport::summarize() {
  std::vector<double> w;
  w.reserve(sessions.size());
  for (const auto& s : sessions) w.push_back(s.wall_ms);
  if (w.empty()) {
    mean_ms = p50_ms = p90_ms = p99_ms = 0;
    return;
  }
  std::sort(w.begin(), w.end());
  double sum = 0;
  for (double v : w) sum += v;
  mean_ms = sum / static_cast<double>(w.size());
  // nearest rank
  auto pct = [&](double p) {
    const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(w.size())));
    return w[std::clamp<std::size_t>(rank, 1, w.size()) - 1];
  };
  p50_ms = pct(50);
  p90_ms = pct(90);
  p99_ms = pct(99);
}

std::filesystem::path default_model_path(Workload w) {
  std::filesystem::path dir = MPCNN_MODEL_DIR;
  if (const char* env = std::getenv("MPCNN_MODEL_DIR"); env && *env) dir = env;
  return dir / (w == Workload::kDrowsy ? "compactcnn.json" : "yolov5-micro.json");
}

SessionSetup prepare_session(const ExperimentSpec& spec, Workload w, std::size_t batch,
                             std::size_t image_size, std::uint64_t seed) {
  const std::string& given = w == Workload::kDrowsy ? spec.drowsy_model : spec.yolo_model;
  ModelGraph g = load_manifest(given.empty() ? default_model_path(w) : std::filesystem::path(given));
  if (!spec.activation.empty() && w == Workload::kDrowsy)
    g = with_activation(g, parse_activation(spec.activation));
  if (image_size != 0 && w == Workload::kYolo) {
    if (g.input.size() != 3) throw GraphError("image size applies to C x H x W inputs");
    g.input[1] = g.input[2] = image_size;
  }
  ProtocolOptions opt = spec.options;
  if (w != Workload::kDrowsy) opt.secure_logsoftmax = false;
  SessionSetup s{make_plan(w, g, batch, opt), synth_weights(g, seed, opt.fp),
                 synth_input(g, batch, seed ^ 0x9e3779b97f4a7c15ULL, opt.fp)};
  return s;
}

SessionRecord run_session(const ExperimentSpec& spec, const SessionSetup& s, Dealer& dealer,
                          std::uint64_t session, TwoPartyResult* raw) {
  TwoPartyResult r = spec.backend == Backend::kTcp
                         ? run_tcp_loopback(dealer, session, s.plan, s.input, s.weights)
                         : run_inproc(dealer, session, s.plan, s.input, s.weights);
  dealer.end_session(session);
  const Transcript& t = r.p0.transcript;
  SessionRecord rec;
  rec.workload = workload_name(s.plan.workload);
  rec.batch = s.plan.batch;
  rec.image_size = s.plan.workload == Workload::kYolo ? s.plan.graph.input.back() : 0;
  rec.backend = backend_name(spec.backend);
  rec.mode = rand_mode_name(s.plan.opt.mode);
  // Pre-deal timing starts once the randomness is in hand.
  rec.wall_ms = s.plan.opt.mode == RandMode::kPreDeal ? std::max(r.p0.online_ms, r.p1.online_ms)
                                                       : std::max(r.p0.wall_ms, r.p1.wall_ms);
  rec.cpu_ms = r.p0.cpu_ms + r.p1.cpu_ms;
  rec.rounds = t.rounds;
  rec.bytes = t.bytes();
  rec.header_bytes = t.header_bytes;
  rec.dealer_bytes = t.dealer_bytes_sent + t.dealer_bytes_received +
                     r.p1.transcript.dealer_bytes_sent + r.p1.transcript.dealer_bytes_received;
  rec.messages = t.messages_sent + t.messages_received;
  const auto n = static_cast<double>(rec.batch);
  rec.per_input_rounds = static_cast<double>(rec.rounds) / n;
  rec.per_input_bytes = static_cast<double>(rec.bytes) / n;
  rec.per_input_ms = rec.wall_ms / n;
  rec.audit_ok = r.p0.audit.ok(s.plan.opt.mode) && r.p1.audit.ok(s.plan.opt.mode);
  if (raw) *raw = std::move(r);
  return rec;
}

namespace {

Seed dealer_seed(std::uint64_t seed) {
  Seed s{};
  for (int i = 0; i < 8; ++i) s[i] = static_cast<std::uint8_t>(seed >> (8 * i));
  s[31] = 0x5a;
  return s;
}

std::vector<std::size_t> or_default(const std::vector<std::size_t>& v, std::size_t d) {
  return v.empty() ? std::vector<std::size_t>{d} : v;
}

std::string cell_label(Workload w, std::size_t batch, std::size_t image) {
  std::string l = std::string(workload_name(w)) + " batch=" + std::to_string(batch);
  if (w == Workload::kYolo && image) l += " image=" + std::to_string(image);
  return l;
}

// Sequential repetitions of one configuration.
RunReport run_cell(const ExperimentSpec& spec, Dealer& dealer, std::atomic<std::uint64_t>& next,
                   std::size_t batch, std::size_t image, const std::string& kind) {
  RunReport rep;
  rep.kind = kind;
  rep.label = cell_label(spec.workload, batch, image);
  rep.drowsy_fraction = spec.workload == Workload::kDrowsy ? 1.0 : 0.0;
  const SessionSetup s = prepare_session(spec, spec.workload, batch, image, spec.seed);
  for (std::size_t i = 0; i < spec.repetitions; ++i) {
    try {
      SessionRecord r = run_session(spec, s, dealer, next++);
      r.repetition = i;
      rep.sessions.push_back(std::move(r));
    } catch (const std::exception& e) {
      rep.errors.push_back("repetition " + std::to_string(i) + ": " + e.what());
    }
  }
  rep.summarize();
  return rep;
}

}  // namespace

RunReport run_single(const ExperimentSpec& spec) {
  Dealer dealer(dealer_seed(spec.seed));
  std::atomic<std::uint64_t> next{1};
  return run_cell(spec, dealer, next, spec.batch, spec.image_size, "single");
}

std::vector<RunReport> run_sweep(const ExperimentSpec& spec) {
  Dealer dealer(dealer_seed(spec.seed));
  std::atomic<std::uint64_t> next{1};
  std::vector<RunReport> out;
  for (std::size_t image : or_default(spec.sweep_image_size, spec.image_size))
    for (std::size_t batch : or_default(spec.sweep_batch, spec.batch))
      out.push_back(run_cell(spec, dealer, next, batch, image, "sweep"));
  return out;
}

std::vector<RunReport> run_multi_agent(const ExperimentSpec& spec) {
  const std::vector<std::size_t> ns =
      spec.n_agents.empty() ? std::vector<std::size_t>{1, 2, 3, 5, 8, 12, 15} : spec.n_agents;
  const std::vector<double> fractions = spec.drowsy_fractions.empty()
                                            ? std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}
                                            : spec.drowsy_fractions;
  Dealer dealer(dealer_seed(spec.seed));
  std::atomic<std::uint64_t> next{1};

  // Setups and solo baselines, shared read-only by every agent of a workload.
  std::map<Workload, SessionSetup> setups;
  std::map<Workload, TwoPartyResult> solo;
  auto need = [&](Workload w) {
    if (setups.count(w)) return;
    setups.emplace(w, prepare_session(spec, w, spec.batch, spec.image_size, spec.seed));
    TwoPartyResult r;
    run_session(spec, setups.at(w), dealer, next++, &r);
    solo.emplace(w, std::move(r));
  };

  std::vector<RunReport> out;
  for (std::size_t n : ns) {
    for (double frac : fractions) {
      const auto [nd, ny] = agent_mix(n, frac);
      std::vector<Workload> agents(nd, Workload::kDrowsy);
      agents.insert(agents.end(), ny, Workload::kYolo);
      for (Workload w : agents) need(w);

      RunReport rep;
      rep.kind = "multi";
      rep.n_agents = n;
      rep.drowsy_fraction = frac;
      std::ostringstream label;
      label << "n=" << n << " drowsy=" << nd << " yolo=" << ny;
      rep.label = label.str();

      std::mutex mu;
      std::atomic<std::size_t> cursor{0};
      const std::size_t pool = std::min(spec.workers == 0 ? n : spec.workers, n);
      auto worker = [&] {
        for (std::size_t a; (a = cursor++) < agents.size();) {
          const Workload w = agents[a];
          for (std::size_t i = 0; i < spec.repetitions; ++i) {
            const std::uint64_t sid = next++;
            try {
              TwoPartyResult r;
              SessionRecord rec = run_session(spec, setups.at(w), dealer, sid, &r);
              rec.agent = a;
              rec.repetition = i;
              Transcript b0 = solo.at(w).p0.transcript, b1 = solo.at(w).p1.transcript;
              b0.session = b1.session = sid;
              rec.isolated = r.p0.transcript.same_counts(b0) && r.p1.transcript.same_counts(b1);
              std::lock_guard lk(mu);
              rep.sessions.push_back(std::move(rec));
            } catch (const std::exception& e) {
              std::lock_guard lk(mu);
              rep.errors.push_back("agent " + std::to_string(a) + " (" + workload_name(w) +
                                   "): " + e.what());
            }
          }
        }
      };
      std::vector<std::thread> threads;
      for (std::size_t i = 0; i < pool; ++i) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
      std::sort(rep.sessions.begin(), rep.sessions.end(), [](const auto& a, const auto& b) {
        return std::tie(a.agent, a.repetition) < std::tie(b.agent, b.repetition);
      });
      rep.summarize();
      out.push_back(std::move(rep));
    }
  }
  return out;
}

std::vector<RunReport> run_experiment(const ExperimentSpec& spec) {
  if (spec.kind == "sweep") return run_sweep(spec);
  if (spec.kind == "multi") return run_multi_agent(spec);
  return {run_single(spec)};
}

double linear_r2(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_r2: need 2+ points");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw std::invalid_argument("linear_r2: x has no spread");
  if (syy == 0) return 1.0;
  return sxy * sxy / (sxx * syy);
}

std::vector<AssertionResult> evaluate_assertions(const ExperimentSpec& spec,
                                                 const std::vector<RunReport>& reports) {
  std::vector<AssertionResult> out;
  const SpecAssertions& a = spec.assertions;

  {
    AssertionResult r{"sessions_completed", true, true, ""};
    std::size_t errors = 0;
    for (const auto& rep : reports) errors += rep.errors.size();
    if (errors) {
      r.passed = false;
      r.detail = std::to_string(errors) + " session(s) failed";
      for (const auto& rep : reports)
        if (!rep.errors.empty()) {
          r.detail += "; first: " + rep.errors.front();
          break;
        }
    }
    out.push_back(r);
  }
  if (a.audit) {
    AssertionResult r{"budget_audit", true, true, ""};
    for (const auto& rep : reports)
      for (const auto& s : rep.sessions)
        if (!s.audit_ok) {
          r.passed = false;
          r.detail = rep.label + ": randomness budget mismatch";
        }
    out.push_back(r);
  }

  // Sweep cells grouped by everything except the swept variable.
  std::map<std::pair<std::string, std::size_t>, std::vector<const SessionRecord*>> by_image;
  std::map<std::pair<std::string, std::size_t>, std::vector<const SessionRecord*>> by_batch;
  for (const auto& rep : reports)
    for (const auto& s : rep.sessions) {
      by_image[{s.workload, s.image_size}].push_back(&s);
      by_batch[{s.workload, s.batch}].push_back(&s);
    }

  if (a.rounds_constant) {
    AssertionResult r{"rounds_constant", true, true, ""};
    std::ostringstream d;
    for (const auto& [key, v] : by_image) {
      for (const auto* s : v) {
        const double back = std::round(s->per_input_rounds * static_cast<double>(s->batch) * 1e3);
        if (s->rounds != v.front()->rounds || back != static_cast<double>(s->rounds) * 1e3) {
          r.passed = false;
          d << key.first << ": batch " << s->batch << " has " << s->rounds << " rounds vs "
            << v.front()->rounds << " at batch " << v.front()->batch << "; ";
        }
      }
      if (r.passed) d << key.first << ": " << v.front()->rounds << " rounds per session; ";
    }
    r.detail = d.str();
    out.push_back(r);
  }
  if (a.bytes_linear_r2) {
    AssertionResult r{"bytes_linear", true, true, ""};
    std::ostringstream d;
    for (const auto& [key, v] : by_image) {
      std::vector<double> x, y;
      for (const auto* s : v) {
        x.push_back(static_cast<double>(s->batch));
        y.push_back(static_cast<double>(s->bytes));
      }
      if (std::all_of(x.begin(), x.end(), [&](double b) { return b == x.front(); })) {
        r.applicable = false;
        d << key.first << ": single batch size; ";
        continue;
      }
      const double r2 = linear_r2(x, y);
      d << key.first << ": R^2=" << r2 << "; ";
      if (r2 < *a.bytes_linear_r2) r.passed = false;
    }
    r.detail = d.str();
    out.push_back(r);
  }
  if (a.monotone_image_size) {
    AssertionResult r{"monotone_image_size", true, true, ""};
    std::ostringstream d;
    for (const auto& [key, v] : by_batch) {
      std::map<std::size_t, std::pair<double, int>> mean;
      for (const auto* s : v) {
        mean[s->image_size].first += s->wall_ms;
        mean[s->image_size].second += 1;
      }
      double prev = -1;
      for (const auto& [img, acc] : mean) {
        const double m = acc.first / acc.second;
        d << key.first << " " << img << ": " << m << " ms; ";
        if (m < prev) r.passed = false;
        prev = m;
      }
    }
    r.detail = d.str();
    out.push_back(r);
  }
  if (a.isolation) {
    AssertionResult r{"isolation", true, true, ""};
    std::size_t bad = 0, total = 0;
    for (const auto& rep : reports)
      for (const auto& s : rep.sessions) {
        ++total;
        if (!s.isolated) ++bad;
      }
    r.passed = bad == 0;
    r.detail = std::to_string(total - bad) + "/" + std::to_string(total) +
               " sessions match their solo transcripts";
    out.push_back(r);
  }
  if (a.max_latency_ratio) {
    AssertionResult r{"max_latency_ratio", true, true, ""};
    const RunReport* lo = nullptr;
    const RunReport* hi = nullptr;
    for (const auto& rep : reports) {
      if (rep.kind != "multi" || rep.drowsy_fraction != 1.0 || rep.sessions.empty()) continue;
      if (!lo || rep.n_agents < lo->n_agents) lo = &rep;
      if (!hi || rep.n_agents > hi->n_agents) hi = &rep;
    }
    std::ostringstream d;
    if (!lo || lo == hi) {
      r.applicable = false;
      d << "needs drowsy-only runs at two agent counts";
    } else {
      const double ratio = hi->mean_ms / lo->mean_ms;
      const unsigned cores = std::thread::hardware_concurrency();
      d << "latency n=" << hi->n_agents << " / n=" << lo->n_agents << " = " << ratio << " (bound "
        << *a.max_latency_ratio << ", " << cores << " cores)";
      if (cores < a.min_cores) {
        r.applicable = false;
        d << "; not applicable below " << a.min_cores << " cores";
      } else {
        r.passed = ratio <= *a.max_latency_ratio;
      }
    }
    r.detail = d.str();
    out.push_back(r);
  }
  return out;
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "json") return ReportFormat::kJson;
  if (s == "csv") return ReportFormat::kCsv;
  throw std::invalid_argument("unknown report format '" + std::string(s) + "' (json|csv)");
}

namespace {

ojson session_json(const SessionRecord& s) {
  ojson j;
  j["workload"] = s.workload;
  j["agent"] = s.agent;
  j["repetition"] = s.repetition;
  j["batch"] = s.batch;
  j["image_size"] = s.image_size;
  j["backend"] = s.backend;
  j["mode"] = s.mode;
  j["wall_ms"] = s.wall_ms;
  j["cpu_ms"] = s.cpu_ms;
  j["rounds"] = s.rounds;
  j["bytes"] = s.bytes;
  j["header_bytes"] = s.header_bytes;
  j["dealer_bytes"] = s.dealer_bytes;
  j["messages"] = s.messages;
  j["per_input_rounds"] = s.per_input_rounds;
  j["per_input_bytes"] = s.per_input_bytes;
  j["per_input_ms"] = s.per_input_ms;
  j["audit_ok"] = s.audit_ok;
  j["isolated"] = s.isolated;
  return j;
}

SessionRecord session_from(const nlohmann::json& j) {
  SessionRecord s;
  s.workload = j.at("workload").get<std::string>();
  s.agent = j.at("agent").get<std::size_t>();
  s.repetition = j.at("repetition").get<std::size_t>();
  s.batch = j.at("batch").get<std::size_t>();
  s.image_size = j.at("image_size").get<std::size_t>();
  s.backend = j.at("backend").get<std::string>();
  s.mode = j.at("mode").get<std::string>();
  s.wall_ms = j.at("wall_ms").get<double>();
  s.cpu_ms = j.at("cpu_ms").get<double>();
  s.rounds = j.at("rounds").get<std::uint64_t>();
  s.bytes = j.at("bytes").get<std::uint64_t>();
  s.header_bytes = j.at("header_bytes").get<std::uint64_t>();
  s.dealer_bytes = j.at("dealer_bytes").get<std::uint64_t>();
  s.messages = j.at("messages").get<std::uint64_t>();
  s.per_input_rounds = j.at("per_input_rounds").get<double>();
  s.per_input_bytes = j.at("per_input_bytes").get<double>();
  s.per_input_ms = j.at("per_input_ms").get<double>();
  s.audit_ok = j.at("audit_ok").get<bool>();
  s.isolated = j.at("isolated").get<bool>();
  return s;
}

const char* const kCsvColumns[] = {
    "schema_version", "label",        "kind",          "n_agents",         "drowsy_fraction",
    "workload",       "agent",        "repetition",    "batch",            "image_size",
    "backend",        "mode",         "wall_ms",       "cpu_ms",           "rounds",
    "bytes",          "header_bytes", "dealer_bytes",  "messages",         "per_input_rounds",
    "per_input_bytes", "per_input_ms", "audit_ok",     "isolated"};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + "\"";
}

}  // namespace

std::string report_json(const std::vector<RunReport>& reports,
                        const std::vector<AssertionResult>& assertions) {
  ojson j;
  j["schema_version"] = kReportSchemaVersion;
  j["reports"] = ojson::array();
  for (const auto& r : reports) {
    ojson o;
    o["label"] = r.label;
    o["kind"] = r.kind;
    o["n_agents"] = r.n_agents;
    o["drowsy_fraction"] = r.drowsy_fraction;
    o["mean_ms"] = r.mean_ms;
    o["p50_ms"] = r.p50_ms;
    o["p90_ms"] = r.p90_ms;
    o["p99_ms"] = r.p99_ms;
    o["errors"] = r.errors;
    o["sessions"] = ojson::array();
    for (const auto& s : r.sessions) o["sessions"].push_back(session_json(s));
    j["reports"].push_back(std::move(o));
  }
  j["assertions"] = ojson::array();
  for (const auto& a : assertions)
    j["assertions"].push_back(
        {{"name", a.name}, {"passed", a.passed}, {"applicable", a.applicable}, {"detail", a.detail}});
  return j.dump(2);
}

std::string report_csv(const std::vector<RunReport>& reports) {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const char* c : kCsvColumns) {
    os << (first ? "" : ",") << c;
    first = false;
  }
  os << '\n';
  for (const auto& r : reports)
    for (const auto& s : r.sessions) {
      os << kReportSchemaVersion << ',' << csv_field(r.label) << ',' << r.kind << ','
         << r.n_agents << ',' << r.drowsy_fraction << ',' << s.workload << ',' << s.agent << ','
         << s.repetition << ',' << s.batch << ',' << s.image_size << ',' << s.backend << ','
         << s.mode << ',' << s.wall_ms << ',' << s.cpu_ms << ',' << s.rounds << ',' << s.bytes
         << ',' << s.header_bytes << ',' << s.dealer_bytes << ',' << s.messages << ','
         << s.per_input_rounds << ',' << s.per_input_bytes << ',' << s.per_input_ms << ','
         << (s.audit_ok ? "true" : "false") << ',' << (s.isolated ? "true" : "false") << '\n';
    }
  return os.str();
}

void export_report(const std::vector<RunReport>& reports, const std::filesystem::path& path,
                   ReportFormat format, const std::vector<AssertionResult>& assertions) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << (format == ReportFormat::kJson ? report_json(reports, assertions) + "\n"
                                        : report_csv(reports));
  if (!out) throw std::runtime_error("failed writing report " + path.string());
}

std::vector<RunReport> parse_report_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("schema_version", 0) != kReportSchemaVersion)
    throw std::invalid_argument("unsupported report schema_version");
  std::vector<RunReport> out;
  for (const auto& o : j.at("reports")) {
    RunReport r;
    r.label = o.at("label").get<std::string>();
    r.kind = o.at("kind").get<std::string>();
    r.n_agents = o.at("n_agents").get<std::size_t>();
    r.drowsy_fraction = o.at("drowsy_fraction").get<double>();
    r.mean_ms = o.at("mean_ms").get<double>();
    r.p50_ms = o.at("p50_ms").get<double>();
    r.p90_ms = o.at("p90_ms").get<double>();
    r.p99_ms = o.at("p99_ms").get<double>();
    r.errors = o.at("errors").get<std::vector<std::string>>();
    for (const auto& s : o.at("sessions")) r.sessions.push_back(session_from(s));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mpcnn
