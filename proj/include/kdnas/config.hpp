#pragma once

// Run configuration: one JSON document overlaid on built-in defaults. Unknown
// keys are rejected; `--set a.b=value` style overrides edit the document
// before it is parsed into typed settings.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kdnas/calibrate.hpp"
#include "kdnas/distill.hpp"
#include "kdnas/engine.hpp"
#include "kdnas/io.hpp"
#include "kdnas/latency.hpp"
#include "kdnas/space.hpp"

namespace kdnas {

inline constexpr const char* kOutputRootEnv = "KDNAS_OUTPUT_ROOT";

inline nlohmann::json default_config() {
  using nlohmann::json;
  return json{
      {"output_dir", "run"},
      {"seed", 0},
      {"space", "paper"},
      {"teacher", {{"arch", nullptr}, {"checkpoint", nullptr}, {"seed", 1}, {"warmup_steps", 0}, {"warmup_lr", 1e-3}}},
      {"corpus", {{"source", "synthetic"}, {"vocab_size", 512}, {"seq_len", 32}, {"n_sequences", 2000}, {"seed", 7}}},
      {"kd",
       {{"objective", "hs"},
        {"mapping", "uniform_last"},
        {"lr", 8e-4},
        {"schedule", "linear"},
        {"warmup_fraction", 0.05},
        {"batch_size", 32},
        {"epochs", 1},
        {"steps", nullptr},
        {"relation_heads", 4},
        {"teacher_relation_layer", 0},
        {"seed", 0}}},
      {"proxy", {{"fraction", kDefaultProxyFraction}, {"epochs", kDefaultProxyEpochs}, {"loss_scale", 1.0}}},
      {"controller", {{"lr", 1e-4}, {"rho", 0.95}, {"lr_decay", 0.9}, {"epochs", kControllerEpochs}}},
      {"search",
       {{"mode", "surrogate"},
        {"episodes", 15},
        {"candidates", 20},
        {"top_k", 3},
        {"recommendations", 3},
        {"jobs", 1},
        {"epsilon", {{"start", 1.0}, {"minimum", 0.05}, {"decay", 0.05}}},
        {"landscape", "planted_optimum"},
        {"landscape_seed", 0}}},
      {"reward", {{"alpha", -0.06}, {"beta", 0.6}, {"teacher_latency_ms", nullptr}}},
      {"latency",
       {{"table", "latency.csv"},
        {"analytic", false},
        {"analytic_teacher_ms", kReportedTeacherLatencyMs},
        {"seq_len", nullptr},
        {"n_samples", 10000},
        {"n_runs", 3},
        {"seed", 0}}},
      {"baseline", {{"per_seed", kBaselinePerSeed}, {"seeds", {1, 2, 3}}}},
      {"compare", {{"student", "4,4,32,64,gelu"}, {"seeds", {0, 1, 2}}}},
      {"calibration",
       {{"probes", json::array()},
        {"n_probes", 6},
        {"probe_seed", 0},
        {"candidates",
         {{{"fraction", 0.1}, {"epochs", 1}},
          {{"fraction", 0.1}, {"epochs", 2}},
          {{"fraction", 0.3}, {"epochs", 1}},
          {{"fraction", 0.3}, {"epochs", 2}},
          {{"fraction", 0.3}, {"epochs", 4}}}},
        {"reference", {{"fraction", 1.0}, {"epochs", 4}}},
        {"min_correlation", 0.8}}},
  };
}

namespace detail {

// Paths whose value may take a different JSON type than the default.
inline bool free_form(const std::string& path) { return path == "/space"; }

inline void overlay(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section " + (path.empty() ? std::string("/") : path) + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string sub = path + "/" + key;
    if (!base.contains(key)) throw ConfigError("unknown config key " + sub);
    auto& slot = base[key];
    if (slot.is_object() && !free_form(sub)) {
      overlay(slot, value, sub);
    } else if (slot.is_null() || free_form(sub) || value.is_null() || slot.type() == value.type() ||
               (slot.is_number() && value.is_number())) {
      slot = value;
    } else {
      throw ConfigError("config key " + sub + " expects " + std::string(slot.type_name()) + ", got " + value.type_name());
    }
  }
}

}  // namespace detail

// Defaults overlaid with `user` (strict: unknown keys and type changes throw).
inline nlohmann::json merge_config(const nlohmann::json& user) {
  auto doc = default_config();
  detail::overlay(doc, user, "");
  return doc;
}

// "a.b.c=value"; value is read as JSON when it parses, else as a string.
inline void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  auto value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json patch = value;
  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  detail::overlay(doc, patch, "");
}

struct TeacherSettings {
  ArchState arch;
  std::optional<std::filesystem::path> checkpoint;
  std::uint64_t seed = 1;
  std::size_t warmup_steps = 0;
  double warmup_lr = 1e-3;
};

struct CorpusSettings {
  std::string source = "synthetic";
  std::size_t vocab_size = 512;
  std::size_t seq_len = 32;
  std::size_t n_sequences = 2000;
  std::uint64_t seed = 7;
};

struct ProxySettings {
  double fraction = kDefaultProxyFraction;
  std::size_t epochs = kDefaultProxyEpochs;
  double loss_scale = 1.0;
};

struct LatencySettings {
  std::filesystem::path table;
  bool analytic = false;
  double analytic_teacher_ms = kReportedTeacherLatencyMs;
  LatencyOptions options;
};

struct CalibrationSettings {
  std::vector<ArchState> probes;
  std::size_t n_probes = 6;
  std::uint64_t probe_seed = 0;
  std::vector<ProxySetting> candidates;
  ProxySetting reference{1.0, 4};
  double min_correlation = 0.8;
};

struct RunConfig {
  nlohmann::json document;  // effective document after defaults and overrides
  std::filesystem::path output_dir;
  std::string space_name;
  SearchSpace space;
  TeacherSettings teacher;
  CorpusSettings corpus;
  KDRunConfig kd;
  ProxySettings proxy;
  SearchConfig search;
  LandscapeKind landscape = LandscapeKind::planted_optimum;
  std::uint64_t landscape_seed = 0;
  std::optional<double> teacher_latency_ms;
  LatencySettings latency;
  std::size_t baseline_per_seed = kBaselinePerSeed;
  std::vector<std::uint64_t> baseline_seeds;
  ArchState compare_student;
  std::vector<std::uint64_t> compare_seeds;
  CalibrationSettings calibration;

  std::string hash() const { return config_hash(document); }
};

// Relative paths land under $KDNAS_OUTPUT_ROOT when set, else the working directory.
inline std::filesystem::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::current_path();
}

inline std::filesystem::path resolve_output(const std::filesystem::path& p) {
  return p.is_absolute() ? p : output_root() / p;
}

namespace detail {

inline SearchSpace space_from_json(const nlohmann::json& j, std::string& name) {
  if (j.is_string()) {
    name = j.get<std::string>();
    if (name == "paper") return paper_space();
    if (name == "desk") return desk_space();
    throw ConfigError("unknown search space '" + name + "' (expected paper, desk or an object)");
  }
  if (!j.is_object()) throw ConfigError("space must be a name or an object");
  for (const auto& [k, _] : j.items())
    if (k != "layers" && k != "heads" && k != "hidden" && k != "intermediate" && k != "activations") {
      throw ConfigError("unknown config key /space/" + k);
    }
  name = "custom";
  SearchSpace s;
  s.layers = j.at("layers").get<std::vector<std::size_t>>();
  s.heads = j.at("heads").get<std::vector<std::size_t>>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.intermediate = j.at("intermediate").get<std::vector<std::size_t>>();
  for (const auto& a : j.at("activations")) s.activations.push_back(activation_from_name(a.get<std::string>()));
  return s;
}

inline ProxySetting proxy_from_json(const nlohmann::json& j) {
  return ProxySetting{j.at("fraction").get<double>(), j.at("epochs").get<std::size_t>()};
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  RunConfig c;
  c.document = doc;
  try {
    c.output_dir = resolve_output(doc.at("output_dir").get<std::string>());
    c.space = detail::space_from_json(doc.at("space"), c.space_name);
    c.space.validate();

    const auto& t = doc.at("teacher");
    if (!t.at("arch").is_null()) {
      c.teacher.arch = parse_state(t.at("arch").get<std::string>());
    } else {
      c.teacher.arch = c.space_name == "paper" ? paper_teacher() : desk_teacher();
    }
    if (!t.at("checkpoint").is_null()) c.teacher.checkpoint = resolve_output(t.at("checkpoint").get<std::string>());
    c.teacher.seed = t.at("seed").get<std::uint64_t>();
    c.teacher.warmup_steps = t.at("warmup_steps").get<std::size_t>();
    c.teacher.warmup_lr = t.at("warmup_lr").get<double>();

    const auto& co = doc.at("corpus");
    c.corpus.source = co.at("source").get<std::string>();
    c.corpus.vocab_size = co.at("vocab_size").get<std::size_t>();
    c.corpus.seq_len = co.at("seq_len").get<std::size_t>();
    c.corpus.n_sequences = co.at("n_sequences").get<std::size_t>();
    c.corpus.seed = co.at("seed").get<std::uint64_t>();

    const auto& kd = doc.at("kd");
    c.kd.objective = objective_from_name(kd.at("objective").get<std::string>());
    c.kd.mapping = mapping_from_name(kd.at("mapping").get<std::string>());
    c.kd.peak_lr = kd.at("lr").get<double>();
    c.kd.schedule = schedule_from_name(kd.at("schedule").get<std::string>());
    c.kd.warmup_fraction = kd.at("warmup_fraction").get<double>();
    c.kd.batch_size = kd.at("batch_size").get<std::size_t>();
    c.kd.epochs = kd.at("epochs").get<std::size_t>();
    if (!kd.at("steps").is_null()) c.kd.steps = kd.at("steps").get<std::size_t>();
    c.kd.relation_heads = kd.at("relation_heads").get<std::size_t>();
    c.kd.teacher_relation_layer = kd.at("teacher_relation_layer").get<std::size_t>();
    c.kd.seed = kd.at("seed").get<std::uint64_t>();
    c.kd.validate();

    const auto& px = doc.at("proxy");
    c.proxy.fraction = px.at("fraction").get<double>();
    c.proxy.epochs = px.at("epochs").get<std::size_t>();
    c.proxy.loss_scale = px.at("loss_scale").get<double>();
    if (!(c.proxy.fraction > 0.0 && c.proxy.fraction <= 1.0)) throw ConfigError("proxy fraction must lie in (0, 1]");
    if (!(c.proxy.loss_scale > 0.0)) throw ConfigError("proxy loss_scale must be positive");

    const auto& ct = doc.at("controller");
    c.search.controller.lr = ct.at("lr").get<double>();
    c.search.controller.rho = ct.at("rho").get<double>();
    c.search.controller.lr_decay = ct.at("lr_decay").get<double>();
    c.search.controller.epochs = ct.at("epochs").get<std::size_t>();

    const auto& se = doc.at("search");
    c.search.seed = doc.at("seed").get<std::uint64_t>();
    c.search.mode = mode_from_name(se.at("mode").get<std::string>());
    c.search.episodes = se.at("episodes").get<std::size_t>();
    c.search.candidates = se.at("candidates").get<std::size_t>();
    c.search.top_k = se.at("top_k").get<std::size_t>();
    c.search.recommendations = se.at("recommendations").get<std::size_t>();
    c.search.jobs = se.at("jobs").get<std::size_t>();
    c.search.epsilon.start = se.at("epsilon").at("start").get<double>();
    c.search.epsilon.minimum = se.at("epsilon").at("minimum").get<double>();
    c.search.epsilon.decay = se.at("epsilon").at("decay").get<double>();
    c.landscape = landscape_from_name(se.at("landscape").get<std::string>());
    c.landscape_seed = se.at("landscape_seed").get<std::uint64_t>();

    const auto& rw = doc.at("reward");
    c.search.reward.alpha = rw.at("alpha").get<double>();
    c.search.reward.beta = rw.at("beta").get<double>();
    if (!rw.at("teacher_latency_ms").is_null()) {
      c.teacher_latency_ms = rw.at("teacher_latency_ms").get<double>();
      c.search.reward.teacher_latency_ms = *c.teacher_latency_ms;
    }

    const auto& la = doc.at("latency");
    c.latency.table = resolve_output(la.at("table").get<std::string>());
    c.latency.analytic = la.at("analytic").get<bool>();
    c.latency.analytic_teacher_ms = la.at("analytic_teacher_ms").get<double>();
    c.latency.options.seq_len = la.at("seq_len").is_null() ? c.corpus.seq_len : la.at("seq_len").get<std::size_t>();
    c.latency.options.n_samples = la.at("n_samples").get<std::size_t>();
    c.latency.options.n_runs = la.at("n_runs").get<std::size_t>();
    c.latency.options.vocab_size = c.corpus.vocab_size;
    c.latency.options.seed = la.at("seed").get<std::uint64_t>();

    c.baseline_per_seed = doc.at("baseline").at("per_seed").get<std::size_t>();
    c.baseline_seeds = doc.at("baseline").at("seeds").get<std::vector<std::uint64_t>>();
    c.compare_student = parse_state(doc.at("compare").at("student").get<std::string>());
    c.compare_seeds = doc.at("compare").at("seeds").get<std::vector<std::uint64_t>>();

    const auto& ca = doc.at("calibration");
    for (const auto& p : ca.at("probes")) c.calibration.probes.push_back(parse_state(p.get<std::string>()));
    c.calibration.n_probes = ca.at("n_probes").get<std::size_t>();
    c.calibration.probe_seed = ca.at("probe_seed").get<std::uint64_t>();
    for (const auto& p : ca.at("candidates")) c.calibration.candidates.push_back(detail::proxy_from_json(p));
    c.calibration.reference = detail::proxy_from_json(ca.at("reference"));
    c.calibration.min_correlation = ca.at("min_correlation").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.search.validate();
  validate(c.teacher.arch);
  if (c.corpus.vocab_size < 2 || c.corpus.seq_len == 0 || c.corpus.n_sequences < 2) {
    throw ConfigError("corpus needs vocab_size >= 2, seq_len >= 1 and at least 2 sequences");
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {}) {
  if (!std::filesystem::exists(file)) throw ConfigError("config file " + file.string() + " does not exist");
  const auto user = nlohmann::json::parse(read_file(file), nullptr, false);
  if (user.is_discarded()) throw ConfigError("config file " + file.string() + " is not valid JSON");
  auto doc = merge_config(user);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

}  // namespace kdnas
