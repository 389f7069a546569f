#pragma once

// The search loop: exploration schedule, candidate selection, evaluation,
// reward, controller retraining, memory update, logging and resumption.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kdnas/arch.hpp"
#include "kdnas/controller.hpp"
#include "kdnas/errors.hpp"
#include "kdnas/io.hpp"
#include "kdnas/latency.hpp"
#include "kdnas/log.hpp"
#include "kdnas/rng.hpp"
#include "kdnas/space.hpp"
#include "kdnas/stats.hpp"

namespace kdnas {

// ---- reward ----

struct RewardParams {
  double alpha = -0.06;
  double beta = 0.6;
  double teacher_latency_ms = kReportedTeacherLatencyMs;

  void validate() const {
    if (!(beta > 0.0)) throw ConfigError("reward beta must be positive");
    if (!(teacher_latency_ms > 0.0)) throw ConfigError("teacher latency must be positive");
    if (!std::isfinite(alpha)) throw ConfigError("reward alpha must be finite");
  }
};

struct RewardDetail {
  double reward = 0.0;
  double clamped_loss = 0.0;
  bool clamped = false;
};

inline double latency_factor(double latency_ms, const RewardParams& p) {
  if (!(latency_ms > 0.0)) throw InputError("latency must be positive");
  return std::pow(latency_ms / (p.beta * p.teacher_latency_ms), p.alpha);
}

inline RewardDetail reward_detail(double loss, double latency_ms, const RewardParams& p) {
  RewardDetail d;
  d.clamped_loss = std::clamp(loss, 0.0, 1.0);
  d.clamped = d.clamped_loss != loss;
  d.reward = (1.0 - d.clamped_loss) * latency_factor(latency_ms, p);
  return d;
}

inline double reward(double loss, double latency_ms, const RewardParams& p = {}) {
  const auto d = reward_detail(loss, latency_ms, p);
  if (d.clamped) log(LogLevel::debug, "reward: loss " + format_double(loss) + " clamped to " + format_double(d.clamped_loss));
  return d.reward;
}

// ---- exploration ----

struct EpsilonSchedule {
  double start = 1.0;
  double minimum = 0.05;
  double decay = 0.05;  // subtracted per episode
};

inline double epsilon(std::size_t episode, const EpsilonSchedule& s = {}) {
  if (episode == 0) throw InputError("episodes are numbered from 1");
  return std::max(s.start - s.decay * static_cast<double>(episode - 1), s.minimum);
}

// round(eps * N), halves rounded up; the tiny offset absorbs binary error in eps.
inline std::size_t random_count(double eps, std::size_t n) {
  return std::min(n, static_cast<std::size_t>(std::floor(eps * static_cast<double>(n) + 0.5 + 1e-9)));
}

enum class Origin { random, controller };

inline std::string_view origin_name(Origin o) { return o == Origin::random ? "random" : "controller"; }

struct Memory {
  std::optional<ArchState> global_best;
  double global_reward = -std::numeric_limits<double>::infinity();
  std::optional<ArchState> previous_best;
  double previous_reward = -std::numeric_limits<double>::infinity();
};

struct CandidateSplit {
  std::vector<ArchState> random;
  std::vector<RankedState> controller;
};

inline CandidateSplit split_candidates(double eps, std::size_t n, const SearchSpace& space,
                                       const std::set<ArchState>& explored, const Controller& net,
                                       const Memory& memory, std::uint64_t seed) {
  const std::size_t available = space.size() - std::count_if(explored.begin(), explored.end(),
                                                              [&](const ArchState& s) { return space.contains(s); });
  if (available < n) {
    throw SearchExhausted(std::to_string(available) + " unexplored states left, " + std::to_string(n) + " needed");
  }
  CandidateSplit out;
  const std::size_t n_random = random_count(eps, n);
  out.random = sample_random(space, n_random, seed, explored);
  if (n_random < n) {
    std::set<ArchState> taken = explored;
    taken.insert(out.random.begin(), out.random.end());
    std::vector<ArchState> rest;
    for (const auto& s : space.enumerate())
      if (!taken.contains(s)) rest.push_back(s);
    out.controller = rank_states(net, space, rest, memory.global_best, memory.previous_best, n - n_random);
  }
  return out;
}

// ---- configuration ----

enum class SearchMode { real_kd, surrogate };

inline std::string_view mode_name(SearchMode m) { return m == SearchMode::real_kd ? "real_kd" : "surrogate"; }

inline SearchMode mode_from_name(std::string_view s) {
  if (s == "real_kd") return SearchMode::real_kd;
  if (s == "surrogate") return SearchMode::surrogate;
  throw ConfigError("unknown search mode '" + std::string(s) + "' (expected real_kd or surrogate)");
}

struct SearchConfig {
  std::size_t episodes = 15;
  std::size_t candidates = 20;
  EpsilonSchedule epsilon;
  RewardParams reward;
  ControllerConfig controller;
  std::size_t top_k = 3;
  std::size_t recommendations = 3;
  std::uint64_t seed = 0;
  SearchMode mode = SearchMode::surrogate;
  std::size_t jobs = 1;

  void validate() const {
    if (episodes == 0) throw ConfigError("episodes must be >= 1");
    if (candidates == 0) throw ConfigError("candidates per episode must be >= 1");
    if (top_k == 0) throw ConfigError("top_k must be >= 1");
    if (jobs == 0) throw ConfigError("jobs must be >= 1");
    if (epsilon.minimum < 0.0 || epsilon.start > 1.0 || epsilon.minimum > epsilon.start) {
      throw ConfigError("epsilon schedule must satisfy 0 <= minimum <= start <= 1");
    }
    reward.validate();
  }

  // Only fields that change results; jobs is excluded.
  nlohmann::json to_json() const {
    return {{"episodes", episodes},
            {"candidates", candidates},
            {"epsilon", {{"start", epsilon.start}, {"minimum", epsilon.minimum}, {"decay", epsilon.decay}}},
            {"reward", {{"alpha", reward.alpha}, {"beta", reward.beta}, {"teacher_latency_ms", reward.teacher_latency_ms}}},
            {"controller",
             {{"lr", controller.lr}, {"rho", controller.rho}, {"lr_decay", controller.lr_decay}, {"epochs", controller.epochs}}},
            {"top_k", top_k},
            {"recommendations", recommendations},
            {"seed", seed},
            {"mode", mode_name(mode)}};
  }
};

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const nlohmann::json& j) { return hash_hex(fnv1a(j.dump())); }

// Human-readable list of differing leaves between two JSON documents.
inline std::string json_diff(const nlohmann::json& a, const nlohmann::json& b) {
  std::ostringstream os;
  const auto patch = nlohmann::json::diff(a, b);
  for (const auto& op : patch) {
    const auto path = op.at("path").get<std::string>();
    const auto kind = op.at("op").get<std::string>();
    nlohmann::json old_value;
    try {
      old_value = a.at(nlohmann::json::json_pointer(path));
    } catch (const std::exception&) {
    }
    os << kind << ' ' << path << ": " << (old_value.is_null() ? "(absent)" : old_value.dump()) << " -> "
       << (op.contains("value") ? op.at("value").dump() : "(absent)") << '\n';
  }
  return os.str();
}

// ---- records and logs ----

inline constexpr int kEpisodeSchemaVersion = 1;

struct CandidateRecord {
  ArchState state;
  Origin origin = Origin::random;
  std::optional<double> loss;
  double latency_ms = 0.0;
  double reward = -std::numeric_limits<double>::infinity();
  std::optional<double> predicted;
  bool failed = false;
  bool clamped = false;
  std::string error;

  nlohmann::json to_json() const {
    nlohmann::json j{{"state", format_state(state)}, {"origin", origin_name(origin)}, {"latency_ms", latency_ms},
                     {"failed", failed}, {"clamped", clamped}};
    j["loss"] = loss ? nlohmann::json(*loss) : nlohmann::json(nullptr);
    j["reward"] = failed ? nlohmann::json(nullptr) : nlohmann::json(reward);
    j["predicted"] = predicted ? nlohmann::json(*predicted) : nlohmann::json(nullptr);
    if (failed) j["error"] = error;
    return j;
  }

  static CandidateRecord from_json(const nlohmann::json& j) {
    CandidateRecord r;
    r.state = parse_state(j.at("state").get<std::string>());
    r.origin = j.at("origin").get<std::string>() == "random" ? Origin::random : Origin::controller;
    if (!j.at("loss").is_null()) r.loss = j.at("loss").get<double>();
    r.latency_ms = j.at("latency_ms").get<double>();
    r.failed = j.at("failed").get<bool>();
    r.clamped = j.value("clamped", false);
    r.reward = r.failed ? -std::numeric_limits<double>::infinity() : j.at("reward").get<double>();
    if (j.contains("predicted") && !j.at("predicted").is_null()) r.predicted = j.at("predicted").get<double>();
    r.error = j.value("error", "");
    return r;
  }
};

struct EpisodeLog {
  std::size_t episode = 0;
  double epsilon = 0.0;
  std::size_t n_random = 0;
  std::vector<CandidateRecord> candidates;
  Memory memory;  // after the update
  ControllerTrainReport controller;
  std::vector<ArchState> recommended;
  std::string config_hash;

  double mean_reward() const {
    std::vector<double> r;
    for (const auto& c : candidates)
      if (!c.failed) r.push_back(c.reward);
    return r.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_of(r);
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"schema_version", kEpisodeSchemaVersion}, {"config_hash", config_hash}, {"episode", episode},
                     {"epsilon", epsilon}, {"n_random", n_random}};
    j["candidates"] = nlohmann::json::array();
    for (const auto& c : candidates) j["candidates"].push_back(c.to_json());
    auto best = [](const std::optional<ArchState>& s, double r) {
      return s ? nlohmann::json{{"state", format_state(*s)}, {"reward", r}} : nlohmann::json(nullptr);
    };
    j["global_best"] = best(memory.global_best, memory.global_reward);
    j["previous_best"] = best(memory.previous_best, memory.previous_reward);
    j["controller_loss"] = {{"initial", controller.initial_loss}, {"epochs", controller.epoch_losses}};
    j["recommended"] = nlohmann::json::array();
    for (const auto& s : recommended) j["recommended"].push_back(format_state(s));
    return j;
  }

  static EpisodeLog from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != kEpisodeSchemaVersion) {
      throw IoError("unsupported episode log schema version " + j.at("schema_version").dump());
    }
    EpisodeLog e;
    e.config_hash = j.at("config_hash").get<std::string>();
    e.episode = j.at("episode").get<std::size_t>();
    e.epsilon = j.at("epsilon").get<double>();
    e.n_random = j.at("n_random").get<std::size_t>();
    for (const auto& c : j.at("candidates")) e.candidates.push_back(CandidateRecord::from_json(c));
    auto best = [](const nlohmann::json& b, std::optional<ArchState>& s, double& r) {
      if (b.is_null()) return;
      s = parse_state(b.at("state").get<std::string>());
      r = b.at("reward").get<double>();
    };
    best(j.at("global_best"), e.memory.global_best, e.memory.global_reward);
    best(j.at("previous_best"), e.memory.previous_best, e.memory.previous_reward);
    e.controller.initial_loss = j.at("controller_loss").at("initial").get<double>();
    e.controller.epoch_losses = j.at("controller_loss").at("epochs").get<std::vector<double>>();
    for (const auto& s : j.at("recommended")) e.recommended.push_back(parse_state(s.get<std::string>()));
    return e;
  }
};

// Memory after one more episode. Failed candidates never become best.
inline Memory update_memory(const Memory& before, const std::vector<CandidateRecord>& episode) {
  Memory m = before;
  m.previous_best.reset();
  m.previous_reward = -std::numeric_limits<double>::infinity();
  for (const auto& c : episode) {
    if (c.failed) continue;
    if (!m.previous_best || c.reward > m.previous_reward || (c.reward == m.previous_reward && c.state < *m.previous_best)) {
      m.previous_best = c.state;
      m.previous_reward = c.reward;
    }
  }
  if (m.previous_best && (!m.global_best || m.previous_reward > m.global_reward)) {
    m.global_best = m.previous_best;
    m.global_reward = m.previous_reward;
  }
  return m;
}

// Rebuilds the memory after each logged episode from candidate records alone.
inline std::vector<Memory> replay_memory(const std::vector<EpisodeLog>& logs) {
  std::vector<Memory> out;
  Memory m;
  for (const auto& log : logs) {
    m = update_memory(m, log.candidates);
    out.push_back(m);
  }
  return out;
}

// Controller training pairs for one episode: memory from before the episode,
// successful candidates only.
inline std::vector<ControllerSample> controller_samples(const SearchSpace& space, const Memory& before,
                                                        const std::vector<CandidateRecord>& episode) {
  std::vector<ControllerSample> out;
  for (const auto& c : episode) {
    if (c.failed) continue;
    out.push_back({make_controller_input(space, c.state, before.global_best, before.previous_best), c.reward});
  }
  return out;
}

// ---- evaluation ----

// Proxy loss for a state; throwing TrainingDiverged (or any kdnas::Error) marks
// the candidate failed.
using CandidateEvaluator = std::function<double(const ArchState&, std::uint64_t seed)>;

inline std::uint64_t candidate_seed(std::uint64_t search_seed, const ArchState& s) {
  return mix_seed(mix_seed(search_seed, "candidate"), fnv1a(format_state(s)));
}

inline std::vector<CandidateRecord> evaluate_candidates(const std::vector<std::pair<ArchState, Origin>>& picks,
                                                        const CandidateEvaluator& evaluate, const LatencyTable& table,
                                                        const RewardParams& rp, std::uint64_t seed, std::size_t jobs) {
  std::vector<CandidateRecord> out(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    out[i].state = picks[i].first;
    out[i].origin = picks[i].second;
    out[i].latency_ms = table.latency_ms(picks[i].first);
  }
  auto run_one = [&](std::size_t i) {
    ExecutionGuard::Evaluation scope;
    auto& r = out[i];
    try {
      const double loss = evaluate(r.state, candidate_seed(seed, r.state));
      if (!std::isfinite(loss)) throw TrainingDiverged("proxy loss is not finite", 0);
      r.loss = loss;
      const auto d = reward_detail(loss, r.latency_ms, rp);
      r.reward = d.reward;
      r.clamped = d.clamped;
    } catch (const MeasurementConflict&) {
      throw;
    } catch (const Error& e) {
      r.failed = true;
      r.reward = -std::numeric_limits<double>::infinity();
      r.error = e.what();
    }
  };
  if (jobs <= 1 || picks.size() <= 1) {
    for (std::size_t i = 0; i < picks.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(jobs, picks.size()); ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i; (i = next.fetch_add(1)) < picks.size();) run_one(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (const auto& r : out) {
    if (r.failed) log_warning("candidate " + format_state(r.state) + " failed: " + r.error);
    if (r.clamped) log_info("candidate " + format_state(r.state) + ": loss " + format_double(*r.loss) + " clamped into [0, 1]");
  }
  return out;
}

// ---- search ----

struct SearchContext {
  SearchSpace space;
  const LatencyTable* latency = nullptr;
  CandidateEvaluator evaluate;
  nlohmann::json fingerprint;  // extra identity (corpus, teacher, landscape) mixed into the config hash
};

struct SearchState {
  std::size_t completed = 0;
  std::set<ArchState> explored;
  Memory memory;
  Controller controller;
  std::vector<EpisodeLog> logs;
};

inline nlohmann::json search_identity(const SearchConfig& cfg, const SearchContext& ctx) {
  nlohmann::json space{{"layers", ctx.space.layers}, {"heads", ctx.space.heads}, {"hidden", ctx.space.hidden},
                       {"intermediate", ctx.space.intermediate}};
  space["activations"] = nlohmann::json::array();
  for (auto a : ctx.space.activations) space["activations"].push_back(activation_name(a));
  return {{"search", cfg.to_json()}, {"space", space}, {"context", ctx.fingerprint}};
}

inline SearchState initial_search_state(const SearchConfig& cfg) {
  return SearchState{0, {}, {}, Controller(kEncodingDim, kControllerCells, mix_seed(cfg.seed, "controller-init")), {}};
}

inline EpisodeLog run_episode(SearchState& st, const SearchConfig& cfg, const SearchContext& ctx) {
  if (!ctx.latency) throw ConfigError("search needs a latency table");
  const std::size_t ep = st.completed + 1;
  const std::uint64_t ep_seed = mix_seed(mix_seed(cfg.seed, "episode"), ep);
  EpisodeLog log;
  log.episode = ep;
  log.epsilon = epsilon(ep, cfg.epsilon);
  log.config_hash = config_hash(search_identity(cfg, ctx));

  const auto split = split_candidates(log.epsilon, cfg.candidates, ctx.space, st.explored, st.controller, st.memory,
                                      mix_seed(ep_seed, "random"));
  log.n_random = split.random.size();
  std::vector<std::pair<ArchState, Origin>> picks;
  for (const auto& s : split.random) picks.emplace_back(s, Origin::random);
  for (const auto& r : split.controller) picks.emplace_back(r.state, Origin::controller);
  log.candidates = evaluate_candidates(picks, ctx.evaluate, *ctx.latency, cfg.reward, cfg.seed, cfg.jobs);
  for (std::size_t i = 0; i < split.controller.size(); ++i) log.candidates[split.random.size() + i].predicted = split.controller[i].predicted;

  const auto samples = controller_samples(ctx.space, st.memory, log.candidates);
  if (!samples.empty()) {
    ControllerConfig cc = cfg.controller;
    cc.seed = mix_seed(ep_seed, "controller");
    log.controller = train_controller(st.controller, samples, cc);
  }
  for (const auto& c : log.candidates) st.explored.insert(c.state);
  st.memory = update_memory(st.memory, log.candidates);
  log.memory = st.memory;
  if (cfg.recommendations > 0) {
    for (const auto& r : rank_states(st.controller, ctx.space, ctx.space.enumerate(), st.memory.global_best,
                                     st.memory.previous_best, std::min(cfg.recommendations, ctx.space.size())))
      log.recommended.push_back(r.state);
  }
  st.completed = ep;
  st.logs.push_back(log);
  return log;
}

// Explored successful candidates, best reward first; ties by state order.
inline std::vector<CandidateRecord> top_k(const std::vector<EpisodeLog>& logs, std::size_t k) {
  std::vector<CandidateRecord> all;
  for (const auto& l : logs)
    for (const auto& c : l.candidates)
      if (!c.failed) all.push_back(c);
  std::sort(all.begin(), all.end(), [](const CandidateRecord& a, const CandidateRecord& b) {
    if (a.reward != b.reward) return a.reward > b.reward;
    return a.state < b.state;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// How often each state appeared among a controller's per-episode recommendations.
inline std::map<ArchState, std::size_t> recommendation_counts(const std::vector<EpisodeLog>& logs) {
  std::map<ArchState, std::size_t> out;
  for (const auto& l : logs)
    for (const auto& s : l.recommended) ++out[s];
  return out;
}

struct SearchResult {
  std::vector<EpisodeLog> logs;
  std::vector<CandidateRecord> top;
  bool complete = false;
};

struct SearchRunOptions {
  std::filesystem::path log_dir;               // empty: keep everything in memory
  std::optional<std::size_t> stop_after;       // run at most this many new episodes
};

inline std::filesystem::path episodes_path(const std::filesystem::path& dir) { return dir / "episodes.jsonl"; }
inline std::filesystem::path controller_checkpoint_path(const std::filesystem::path& dir, std::size_t episode) {
  return dir / "controller" / ("episode_" + std::to_string(episode) + ".ckpt");
}

// Reads complete episode lines; a trailing partial line is dropped and the
// file truncated to the last complete record.
inline std::vector<EpisodeLog> read_episode_logs(const std::filesystem::path& file, bool repair = false) {
  std::vector<EpisodeLog> logs;
  if (!std::filesystem::exists(file)) return logs;
  const std::string text = read_file(file);
  std::size_t pos = 0, good_end = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    const auto line = text.substr(pos, nl - pos);
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) break;
    logs.push_back(EpisodeLog::from_json(j));
    pos = nl + 1;
    good_end = pos;
  }
  if (good_end != text.size()) {
    if (!repair) throw IoError(file.string() + " ends with an incomplete record");
    log_warning("dropping incomplete trailing record in " + file.string());
    std::filesystem::resize_file(file, good_end);
  }
  return logs;
}

inline void append_line(const std::filesystem::path& file, const std::string& line) {
  std::ofstream os(file, std::ios::binary | std::ios::app);
  if (!os) throw IoError("cannot append to " + file.string());
  os << line << '\n';
  os.flush();
  if (!os) throw IoError("short write to " + file.string());
}

// Resumes from `log_dir` when it already holds episodes of the same
// configuration; a different configuration is refused with a diff.
inline SearchResult run_search(const SearchConfig& cfg, const SearchContext& ctx, const SearchRunOptions& opt = {}) {
  cfg.validate();
  ctx.space.validate();
  if (!ctx.latency) throw ConfigError("search needs a latency table");
  if (!ctx.latency->covers(ctx.space)) throw InputError("latency table does not cover the search space");
  if (cfg.episodes * cfg.candidates > ctx.space.size()) {
    throw ConfigError("search would evaluate " + std::to_string(cfg.episodes * cfg.candidates) + " states but the space holds " +
                      std::to_string(ctx.space.size()));
  }
  const auto identity = search_identity(cfg, ctx);
  const auto hash = config_hash(identity);
  SearchState st = initial_search_state(cfg);

  if (!opt.log_dir.empty()) {
    std::filesystem::create_directories(opt.log_dir / "controller");
    const auto config_file = opt.log_dir / "search_identity.json";
    if (std::filesystem::exists(config_file)) {
      const auto stored = nlohmann::json::parse(read_file(config_file));
      if (config_hash(stored) != hash) {
        throw ConfigMismatch("log directory " + opt.log_dir.string() + " belongs to a different search configuration",
                             json_diff(stored, identity));
      }
    } else {
      write_file_atomic(config_file, identity.dump(2) + "\n");
    }
    st.logs = read_episode_logs(episodes_path(opt.log_dir), true);
    for (const auto& l : st.logs) {
      if (l.config_hash != hash) throw ConfigMismatch("episode log written by another configuration", l.config_hash + " vs " + hash);
    }
    if (st.logs.size() > cfg.episodes) throw ConfigError("log holds more episodes than configured");
    if (!st.logs.empty()) {
      st.completed = st.logs.size();
      const auto mem = replay_memory(st.logs);
      st.memory = mem.back();
      for (const auto& l : st.logs)
        for (const auto& c : l.candidates) st.explored.insert(c.state);
      st.controller = load_controller(controller_checkpoint_path(opt.log_dir, st.completed));
      log_info("resuming search after episode " + std::to_string(st.completed));
    }
  }

  std::size_t ran = 0;
  while (st.completed < cfg.episodes && (!opt.stop_after || ran < *opt.stop_after)) {
    const auto log = run_episode(st, cfg, ctx);
    ++ran;
    if (!opt.log_dir.empty()) {
      save_controller(controller_checkpoint_path(opt.log_dir, log.episode), st.controller,
                      {{"episode", log.episode}, {"config_hash", hash}});
      append_line(episodes_path(opt.log_dir), log.to_json().dump());
    }
  }
  SearchResult result;
  result.logs = st.logs;
  result.top = top_k(st.logs, cfg.top_k);
  result.complete = st.completed == cfg.episodes;
  return result;
}

// episode, epsilon, best reward so far, mean reward of the episode.
inline std::string reward_curve_csv(const std::vector<EpisodeLog>& logs) {
  std::string out = "episode,epsilon,best_reward,mean_reward\n";
  for (const auto& l : logs) {
    out += std::to_string(l.episode) + ',' + format_double(l.epsilon) + ',' +
           (l.memory.global_best ? format_double(l.memory.global_reward) : std::string("nan")) + ',' +
           format_double(l.mean_reward()) + '\n';
  }
  return out;
}

inline std::string topk_csv(const std::vector<CandidateRecord>& top, const std::map<ArchState, std::size_t>& recommended = {}) {
  std::string out = "rank,layers,heads,hidden,intermediate,activation,loss,latency_ms,reward,recommended\n";
  for (std::size_t i = 0; i < top.size(); ++i) {
    const auto& c = top[i];
    const auto it = recommended.find(c.state);
    out += std::to_string(i + 1) + ',' + format_state(c.state) + ',' + format_double(c.loss.value_or(NAN)) + ',' +
           format_double(c.latency_ms) + ',' + format_double(c.reward) + ',' +
           std::to_string(it == recommended.end() ? 0 : it->second) + '\n';
  }
  return out;
}

// ---- random baseline ----

struct BaselineRow {
  std::uint64_t seed = 0;
  std::vector<CandidateRecord> records;
  double mean_loss = 0.0, std_loss = 0.0;
  double mean_latency = 0.0, std_latency = 0.0;
  double mean_reward = 0.0, std_reward = 0.0;
  double best_reward = -std::numeric_limits<double>::infinity();
};

inline constexpr std::size_t kBaselinePerSeed = 3;
inline constexpr std::size_t kBaselineSeeds = 3;

// Uniform samples scored through the same evaluator, latency table and reward
// as the search. Failed samples count toward the budget but not the means.
inline std::vector<BaselineRow> random_baseline(const SearchSpace& space, std::size_t n_per_seed,
                                                const std::vector<std::uint64_t>& seeds, const CandidateEvaluator& evaluate,
                                                const LatencyTable& table, const RewardParams& rp, std::size_t jobs = 1) {
  std::vector<BaselineRow> rows;
  for (auto seed : seeds) {
    BaselineRow row;
    row.seed = seed;
    std::vector<std::pair<ArchState, Origin>> picks;
    for (const auto& s : sample_random(space, n_per_seed, mix_seed(seed, "baseline"))) picks.emplace_back(s, Origin::random);
    row.records = evaluate_candidates(picks, evaluate, table, rp, seed, jobs);
    std::vector<double> loss, lat, rew;
    for (const auto& r : row.records) {
      if (r.failed) continue;
      loss.push_back(*r.loss);
      lat.push_back(r.latency_ms);
      rew.push_back(r.reward);
      row.best_reward = std::max(row.best_reward, r.reward);
    }
    if (!rew.empty()) {
      row.mean_loss = mean_of(loss), row.std_loss = stddev_of(loss);
      row.mean_latency = mean_of(lat), row.std_latency = stddev_of(lat);
      row.mean_reward = mean_of(rew), row.std_reward = stddev_of(rew);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string baseline_csv(const std::vector<BaselineRow>& rows) {
  std::string out = "seed,n,mean_loss,std_loss,mean_latency_ms,std_latency_ms,mean_reward,std_reward,best_reward\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + ',' + std::to_string(r.records.size()) + ',' + format_double(r.mean_loss) + ',' +
           format_double(r.std_loss) + ',' + format_double(r.mean_latency) + ',' + format_double(r.std_latency) + ',' +
           format_double(r.mean_reward) + ',' + format_double(r.std_reward) + ',' + format_double(r.best_reward) + '\n';
  }
  return out;
}

// ---- surrogate landscapes ----

enum class LandscapeKind { planted_optimum, smooth_monotone, random };

inline std::string_view landscape_name(LandscapeKind k) {
  switch (k) {
    case LandscapeKind::planted_optimum: return "planted_optimum";
    case LandscapeKind::smooth_monotone: return "smooth_monotone";
    case LandscapeKind::random: return "random";
  }
  return "?";
}

inline LandscapeKind landscape_from_name(std::string_view s) {
  for (auto k : {LandscapeKind::planted_optimum, LandscapeKind::smooth_monotone, LandscapeKind::random})
    if (landscape_name(k) == s) return k;
  throw ConfigError("unknown landscape '" + std::string(s) + "'");
}

// Pseudo-loss chosen so that the reward computed from it and the table latency
// equals a designed target reward in [kLow, kHigh].
struct SurrogateLandscape {
  static constexpr double kLow = 0.3;
  static constexpr double kHigh = 0.75;

  LandscapeKind kind = LandscapeKind::planted_optimum;
  ArchState optimum;
  std::map<ArchState, double> target;  // designed reward per state
  std::map<ArchState, double> loss;

  double loss_of(const ArchState& s) const {
    auto it = loss.find(s);
    if (it == loss.end()) throw InputError("state " + format_state(s) + " is outside the landscape");
    return it->second;
  }

  CandidateEvaluator evaluator() const {
    return [this](const ArchState& s, std::uint64_t) { return loss_of(s); };
  }

  nlohmann::json fingerprint(std::uint64_t seed) const {
    return {{"landscape", landscape_name(kind)}, {"landscape_seed", seed}, {"optimum", format_state(optimum)}};
  }
};

namespace detail {

template <class T>
double ordinal(const std::vector<T>& values, const T& v) {
  const auto it = std::find(values.begin(), values.end(), v);
  const auto n = values.size();
  return n <= 1 ? 0.0 : static_cast<double>(it - values.begin()) / static_cast<double>(n - 1);
}

}  // namespace detail

inline SurrogateLandscape surrogate_landscape(const SearchSpace& space, const LatencyTable& table, LandscapeKind kind,
                                              std::uint64_t seed, const RewardParams& rp = {}) {
  space.validate();
  SurrogateLandscape land;
  land.kind = kind;
  const auto states = space.enumerate();
  Rng rng(mix_seed(seed, "landscape"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double lo = SurrogateLandscape::kLow, hi = SurrogateLandscape::kHigh;

  switch (kind) {
    case LandscapeKind::planted_optimum: {
      // Reward falls off with normalized distance from a hidden state, plus a
      // small fixed perturbation; the optimum alone sits at the top.
      land.optimum = states[std::uniform_int_distribution<std::size_t>(0, states.size() - 1)(rng)];
      const auto& o = land.optimum;
      for (const auto& s : states) {
        const double closeness =
            (5.0 - std::abs(detail::ordinal(space.layers, s.layers) - detail::ordinal(space.layers, o.layers)) -
             std::abs(detail::ordinal(space.heads, s.heads) - detail::ordinal(space.heads, o.heads)) -
             std::abs(detail::ordinal(space.hidden, s.hidden) - detail::ordinal(space.hidden, o.hidden)) -
             std::abs(detail::ordinal(space.intermediate, s.intermediate) - detail::ordinal(space.intermediate, o.intermediate)) -
             (s.activation == o.activation ? 0.0 : 1.0)) / 5.0;
        const double jitter = 0.02 * unit(rng);
        land.target[s] = s == o ? hi : lo + (hi - lo - 0.06) * closeness + jitter;
      }
      break;
    }
    case LandscapeKind::smooth_monotone: {
      std::map<std::size_t, double> wl, wh, wf;
      std::map<Activation, double> wa;
      for (auto v : space.layers) wl[v] = unit(rng);
      for (auto v : space.heads) wh[v] = unit(rng);
      for (auto v : space.intermediate) wf[v] = unit(rng);
      for (auto v : space.activations) wa[v] = unit(rng);
      double best = -1.0;
      for (const auto& s : states) {
        const double rest = (wl[s.layers] + wh[s.heads] + wf[s.intermediate] + wa[s.activation]) / 4.0;
        const double r = lo + (hi - lo) * (0.5 * detail::ordinal(space.hidden, s.hidden) + 0.5 * rest);
        land.target[s] = r;
        if (r > best) best = r, land.optimum = s;
      }
      break;
    }
    case LandscapeKind::random: {
      double best = -1.0;
      for (const auto& s : states) {
        const double r = lo + (hi - lo) * unit(rng);
        land.target[s] = r;
        if (r > best) best = r, land.optimum = s;
      }
      break;
    }
  }
  for (const auto& [s, r] : land.target) {
    const double factor = latency_factor(table.latency_ms(s), rp);
    const double l = 1.0 - r / factor;
    if (l < 0.0 || l > 1.0) {
      throw ConfigError("latency of " + format_state(s) + " leaves no pseudo-loss in [0, 1] for reward " + format_double(r));
    }
    land.loss[s] = l;
  }
  return land;
}

}  // namespace kdnas
