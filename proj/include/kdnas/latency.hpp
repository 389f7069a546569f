#pragma once

// Single-inference latency of randomly initialized encoders and the persistent
// lookup table the reward reads from. Rewards never trigger measurement.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kdnas/arch.hpp"
#include "kdnas/errors.hpp"
#include "kdnas/io.hpp"
#include "kdnas/log.hpp"
#include "kdnas/model.hpp"
#include "kdnas/space.hpp"
#include "kdnas/stats.hpp"

namespace kdnas {

// ---- exclusive execution ----

// Benchmarks refuse to start while candidate evaluations are running and vice versa.
class ExecutionGuard {
 public:
  class Evaluation {
   public:
    Evaluation() {
      std::lock_guard lock(state().mutex);
      if (state().measuring) throw MeasurementConflict("cannot evaluate candidates while a latency benchmark runs");
      ++state().evaluations;
    }
    ~Evaluation() {
      std::lock_guard lock(state().mutex);
      --state().evaluations;
    }
    Evaluation(const Evaluation&) = delete;
    Evaluation& operator=(const Evaluation&) = delete;
  };

  class Measurement {
   public:
    Measurement() {
      std::lock_guard lock(state().mutex);
      if (state().evaluations > 0) {
        throw MeasurementConflict("refusing to benchmark while " + std::to_string(state().evaluations) +
                                  " candidate evaluation(s) run");
      }
      if (state().measuring) throw MeasurementConflict("another latency benchmark is already running");
      state().measuring = true;
    }
    ~Measurement() {
      std::lock_guard lock(state().mutex);
      state().measuring = false;
    }
    Measurement(const Measurement&) = delete;
    Measurement& operator=(const Measurement&) = delete;
  };

  static int active_evaluations() {
    std::lock_guard lock(state().mutex);
    return state().evaluations;
  }

 private:
  struct State {
    std::mutex mutex;
    int evaluations = 0;
    bool measuring = false;
  };
  static State& state() {
    static State s;
    return s;
  }
};

// ---- measurement ----

inline constexpr std::size_t kWarmupForwards = 10;

struct LatencyOptions {
  std::size_t seq_len = 32;
  std::size_t n_samples = 10000;
  std::size_t n_runs = 3;
  std::size_t vocab_size = 512;
  std::uint64_t seed = 0;
};

struct LatencyMeasurement {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::vector<double> run_means_ms;
  std::vector<std::string> warnings;
};

// Wall clock of batch-size-1 forwards on a freshly initialized model. Model
// construction and input generation are outside the timed region; each run
// starts with kWarmupForwards untimed forwards.
inline LatencyMeasurement measure_latency(const ArchState& arch, const LatencyOptions& opt) {
  if (opt.n_samples == 0 || opt.n_runs == 0) throw ConfigError("latency needs at least one sample and one run");
  ExecutionGuard::Measurement exclusive;
  Model model(arch, opt.vocab_size, opt.seq_len, mix_seed(opt.seed, "latency-model"));
  model.set_trainable(false);
  Rng rng(mix_seed(opt.seed, "latency-inputs"));
  std::uniform_int_distribution<int> id(1, static_cast<int>(opt.vocab_size) - 1);
  std::vector<std::vector<int>> inputs(std::min<std::size_t>(opt.n_samples, 256), std::vector<int>(opt.seq_len));
  for (auto& s : inputs)
    for (auto& t : s) t = id(rng);

  using Clock = std::chrono::steady_clock;
  const double tick_ms = 1e3 * static_cast<double>(Clock::period::num) / static_cast<double>(Clock::period::den);
  LatencyMeasurement out;
  double sink = 0.0;
  for (std::size_t run = 0; run < opt.n_runs; ++run) {
    for (std::size_t w = 0; w < kWarmupForwards; ++w) sink += forward(model, inputs[w % inputs.size()]).hidden_states.back()[0];
    const auto start = Clock::now();
    for (std::size_t i = 0; i < opt.n_samples; ++i) sink += forward(model, inputs[i % inputs.size()]).hidden_states.back()[0];
    const double total_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    if (total_ms < 100.0 * tick_ms) {
      out.warnings.push_back("run " + std::to_string(run + 1) + " lasted " + format_double(total_ms) +
                             " ms, within 100 ticks of the timer resolution (" + format_double(tick_ms) + " ms)");
    }
    out.run_means_ms.push_back(total_ms / static_cast<double>(opt.n_samples));
  }
  if (!std::isfinite(sink)) out.warnings.push_back("non-finite model output during timing");
  out.mean_ms = mean_of(out.run_means_ms);
  out.std_ms = stddev_of(out.run_means_ms);
  if (!(out.mean_ms > 0.0)) {
    out.warnings.push_back("measured mean is not positive; clamped to the timer resolution");
    out.mean_ms = tick_ms;
  }
  return out;
}

// ---- table ----

struct LatencyEntry {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_runs = 0;

  friend bool operator==(const LatencyEntry&, const LatencyEntry&) = default;
};

struct LatencyEnvironment {
  std::string host;
  unsigned cores = 0;
  std::size_t seq_len = 0;
  unsigned threads = 1;
  std::string timed_region = "forward only, batch 1, 10 warmup forwards per run excluded";
  std::string source = "measured";  // or "analytic"

  friend bool operator==(const LatencyEnvironment&, const LatencyEnvironment&) = default;

  nlohmann::json to_json() const {
    return {{"host", host}, {"cores", cores}, {"seq_len", seq_len}, {"threads", threads}, {"timed_region", timed_region},
            {"source", source}};
  }
  static LatencyEnvironment from_json(const nlohmann::json& j) {
    LatencyEnvironment e;
    e.host = j.at("host").get<std::string>();
    e.cores = j.at("cores").get<unsigned>();
    e.seq_len = j.at("seq_len").get<std::size_t>();
    e.threads = j.value("threads", 1u);
    e.timed_region = j.value("timed_region", e.timed_region);
    e.source = j.value("source", e.source);
    return e;
  }
};

inline LatencyEnvironment current_environment(std::size_t seq_len) {
  char name[256] = {};
  if (gethostname(name, sizeof name - 1) != 0) name[0] = '\0';
  LatencyEnvironment e;
  e.host = name[0] ? name : "unknown";
  e.cores = std::thread::hardware_concurrency();
  e.seq_len = seq_len;
  return e;
}

inline constexpr std::string_view kLatencyCsvHeader =
    "layers,heads,hidden,intermediate,activation,mean_ms,std_ms,n_samples,n_runs";

// <table>.csv pairs with <table>.meta.json.
inline std::filesystem::path latency_sidecar(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta.json");
  return p;
}

class LatencyTable {
 public:
  LatencyEnvironment environment;
  std::optional<ArchState> teacher;
  std::vector<ArchState> missing;

  const std::map<ArchState, LatencyEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const ArchState& s) const { return entries_.contains(s); }

  void insert(const ArchState& s, const LatencyEntry& e) {
    if (!(e.mean_ms > 0.0) || !(e.std_ms >= 0.0) || !std::isfinite(e.mean_ms) || !std::isfinite(e.std_ms)) {
      throw InputError("latency entry for " + format_state(s) + " needs mean > 0 and std >= 0");
    }
    entries_[s] = e;
    std::erase(missing, s);
  }

  // Pure lookup; absent states are an error, never a reason to measure.
  const LatencyEntry& lookup(const ArchState& s) const {
    auto it = entries_.find(s);
    if (it == entries_.end()) throw InputError("latency table has no entry for " + format_state(s));
    return it->second;
  }

  double latency_ms(const ArchState& s) const { return lookup(s).mean_ms; }

  double teacher_ms() const {
    if (!teacher) throw InputError("latency table records no teacher profile");
    return latency_ms(*teacher);
  }

  bool covers(const SearchSpace& space) const {
    for (const auto& s : space.enumerate())
      if (!contains(s)) return false;
    return true;
  }

  std::string to_csv() const {
    std::string out(kLatencyCsvHeader);
    out += '\n';
    for (const auto& [s, e] : entries_) {
      out += std::to_string(s.layers) + ',' + std::to_string(s.heads) + ',' + std::to_string(s.hidden) + ',' +
             std::to_string(s.intermediate) + ',' + std::string(activation_name(s.activation)) + ',' +
             format_double(e.mean_ms) + ',' + format_double(e.std_ms) + ',' + std::to_string(e.n_samples) + ',' +
             std::to_string(e.n_runs) + '\n';
    }
    return out;
  }

  nlohmann::json sidecar() const {
    nlohmann::json j{{"schema_version", 1}, {"environment", environment.to_json()}};
    j["teacher"] = teacher ? nlohmann::json(format_state(*teacher)) : nlohmann::json(nullptr);
    j["missing"] = nlohmann::json::array();
    for (const auto& s : missing) j["missing"].push_back(format_state(s));
    return j;
  }

  void save(const std::filesystem::path& csv) const {
    write_file_atomic(csv, to_csv());
    write_file_atomic(latency_sidecar(csv), sidecar().dump(2) + "\n");
  }

  static LatencyTable load(const std::filesystem::path& csv) {
    if (!std::filesystem::exists(csv)) throw IoError("latency table " + csv.string() + " does not exist");
    LatencyTable t;
    std::istringstream is(read_file(csv));
    std::string line;
    if (!std::getline(is, line) || line != kLatencyCsvHeader) {
      throw ParseError(csv.string() + ": unexpected header '" + line + "'", 0);
    }
    std::size_t row = 1;
    while (std::getline(is, line)) {
      ++row;
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
      if (f.size() != 9) throw ParseError(csv.string() + ": row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields", row);
      const ArchState s = parse_state(f[0] + ',' + f[1] + ',' + f[2] + ',' + f[3] + ',' + f[4]);
      t.insert(s, LatencyEntry{parse_double(f[5]), parse_double(f[6]), std::stoul(f[7]), std::stoul(f[8])});
    }
    const auto side = latency_sidecar(csv);
    if (std::filesystem::exists(side)) {
      const auto j = nlohmann::json::parse(read_file(side));
      t.environment = LatencyEnvironment::from_json(j.at("environment"));
      if (!j.at("teacher").is_null()) t.teacher = parse_state(j.at("teacher").get<std::string>());
      for (const auto& m : j.value("missing", nlohmann::json::array())) t.missing.push_back(parse_state(m.get<std::string>()));
    }
    return t;
  }

 private:
  std::map<ArchState, LatencyEntry> entries_;
};

// Warning text when a table was produced elsewhere; empty when comparable.
inline std::optional<std::string> environment_warning(const LatencyTable& table, const LatencyEnvironment& here) {
  if (table.environment.source == "analytic") return std::nullopt;
  if (table.environment.host != here.host || table.environment.cores != here.cores) {
    return "latency table was measured on " + table.environment.host + " (" + std::to_string(table.environment.cores) +
           " cores), current host is " + here.host + " (" + std::to_string(here.cores) + " cores)";
  }
  return std::nullopt;
}

using LatencyMeasurer = std::function<LatencyEntry(const ArchState&)>;

inline LatencyMeasurer timing_measurer(const LatencyOptions& opt) {
  return [opt](const ArchState& s) {
    const auto m = measure_latency(s, opt);
    for (const auto& w : m.warnings) log_warning(format_state(s) + ": " + w);
    return LatencyEntry{m.mean_ms, m.std_ms, opt.n_samples, opt.n_runs};
  };
}

struct TableBuildReport {
  std::size_t measured = 0;
  std::size_t skipped = 0;
  std::vector<std::pair<ArchState, std::string>> failures;
};

// One entry per space state plus the teacher. An existing table at `path` is
// extended (present states are skipped); the table is saved after every new
// entry, and states that fail are listed in the sidecar's missing manifest.
inline LatencyTable build_table(const SearchSpace& space, const ArchState& teacher, const LatencyEnvironment& env,
                                const LatencyMeasurer& measure, const std::filesystem::path& path = {},
                                TableBuildReport* report = nullptr) {
  LatencyTable table;
  if (!path.empty() && std::filesystem::exists(path)) {
    table = LatencyTable::load(path);
    if (!(table.environment == env)) {
      throw ConfigMismatch("existing latency table was built in a different environment",
                           "existing: " + table.environment.to_json().dump() + "\nrequested: " + env.to_json().dump());
    }
  }
  table.environment = env;
  table.teacher = teacher;
  table.missing.clear();
  TableBuildReport local;
  auto states = space.enumerate();
  if (!space.contains(teacher)) states.push_back(teacher);
  for (const auto& s : states) {
    if (table.contains(s)) {
      ++local.skipped;
      continue;
    }
    try {
      table.insert(s, measure(s));
      ++local.measured;
      if (!path.empty()) table.save(path);
    } catch (const MeasurementConflict&) {
      throw;
    } catch (const Error& e) {
      local.failures.emplace_back(s, e.what());
      table.missing.push_back(s);
      log_warning("latency of " + format_state(s) + " not measured: " + e.what());
    }
  }
  if (!path.empty()) table.save(path);
  if (report) *report = local;
  return table;
}

// ---- analytic cost model ----

// Per-inference cost in ms: matmul work per token plus a fixed per-layer
// overhead, with a small activation-dependent term. Coefficients are a least
// squares fit to CPU latencies of seven encoder shapes (teacher 12x768 at
// 64.98 ms); analytic tables rescale so the teacher lands exactly on its value.
inline double analytic_latency_cost(const ArchState& s) {
  const double d = static_cast<double>(s.hidden), f = static_cast<double>(s.intermediate);
  const double layers = static_cast<double>(s.layers);
  const double activation_weight = s.activation == Activation::relu ? 0.2 : s.activation == Activation::silu ? 0.8 : 1.0;
  return layers * (0.62 * (4.0 * d * d + 2.0 * d * f) / 1e6 + 1.0 + 2e-5 * f * activation_weight);
}

inline constexpr double kReportedTeacherLatencyMs = 64.98;

inline LatencyTable analytic_latency_table(const SearchSpace& space, const ArchState& teacher,
                                           double teacher_ms = kReportedTeacherLatencyMs) {
  if (!(teacher_ms > 0.0)) throw ConfigError("teacher latency must be positive");
  LatencyTable t;
  t.environment.host = "analytic";
  t.environment.source = "analytic";
  t.environment.timed_region = "analytic cost model";
  t.teacher = teacher;
  const double scale = teacher_ms / analytic_latency_cost(teacher);
  auto add = [&](const ArchState& s) { t.insert(s, LatencyEntry{scale * analytic_latency_cost(s), 0.0, 0, 0}); };
  for (const auto& s : space.enumerate()) add(s);
  if (!t.contains(teacher)) add(teacher);
  return t;
}

}  // namespace kdnas
