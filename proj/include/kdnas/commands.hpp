#pragma once

// Command implementations behind the kdnas executable. Each command reads a
// RunConfig, writes its artifacts under output_dir and returns a summary.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdnas/calibrate.hpp"
#include "kdnas/checkpoint.hpp"
#include "kdnas/config.hpp"
#include "kdnas/corpus.hpp"
#include "kdnas/distill.hpp"
#include "kdnas/engine.hpp"
#include "kdnas/io.hpp"
#include "kdnas/latency.hpp"
#include "kdnas/log.hpp"

namespace kdnas {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingArtifact = 3;
inline constexpr int kExitRuntime = 4;

struct CommandResult {
  int status = kExitOk;
  std::vector<std::filesystem::path> files;
  nlohmann::json summary = nlohmann::json::object();
};

inline std::filesystem::path write_effective_config(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / "effective_config.json";
  write_file_atomic(path, nlohmann::json{{"config", cfg.document}, {"config_hash", cfg.hash()}}.dump(2) + "\n");
  return path;
}

inline BatchStream make_corpus(const RunConfig& cfg) {
  const auto& c = cfg.corpus;
  if (c.source == "synthetic") {
    SyntheticSpec spec;
    spec.n_sequences = c.n_sequences;
    return load_corpus(spec, c.vocab_size, c.seq_len, c.seed, cfg.kd.batch_size);
  }
  if (!std::filesystem::exists(c.source)) throw MissingArtifact("corpus file " + c.source + " does not exist");
  return load_corpus(TextSource{c.source}, c.vocab_size, c.seq_len, c.seed, cfg.kd.batch_size);
}

inline Model make_teacher(const RunConfig& cfg, const BatchStream& corpus) {
  const auto& t = cfg.teacher;
  if (t.checkpoint) {
    if (!std::filesystem::exists(*t.checkpoint)) {
      throw MissingArtifact("teacher checkpoint " + t.checkpoint->string() + " does not exist");
    }
    auto model = load_model(*t.checkpoint);
    if (model.vocab_size() != corpus.vocab_size() || model.max_seq() < corpus.seq_len()) {
      throw ConfigError("teacher checkpoint vocabulary/length does not fit the corpus");
    }
    model.set_trainable(false);
    return model;
  }
  auto model = build_model(t.arch, corpus.vocab_size(), corpus.seq_len(), t.seed);
  if (t.warmup_steps > 0) {
    const auto history = warmup_teacher(model, corpus, t.warmup_steps, t.warmup_lr, t.seed);
    log_info("teacher warmup: masked-token loss " + format_double(history.front()) + " -> " + format_double(history.back()));
  }
  model.set_trainable(false);
  return model;
}

inline LatencyTable require_latency_table(const RunConfig& cfg) {
  if (cfg.latency.analytic) return analytic_latency_table(cfg.space, cfg.teacher.arch, cfg.latency.analytic_teacher_ms);
  const auto& path = cfg.latency.table;
  const std::string remedy = "; build it with `kdnas latency-table --config <same config>`";
  if (!std::filesystem::exists(path)) throw MissingArtifact("latency table " + path.string() + " not found" + remedy);
  auto table = LatencyTable::load(path);
  if (!table.covers(cfg.space) || !table.contains(cfg.teacher.arch)) {
    throw MissingArtifact("latency table " + path.string() + " does not cover the search space and teacher" + remedy);
  }
  if (auto w = environment_warning(table, current_environment(cfg.latency.options.seq_len))) log_warning(*w);
  return table;
}

// Reward settings with the teacher latency taken from the table unless pinned.
inline RewardParams resolve_reward(const RunConfig& cfg, const LatencyTable& table) {
  RewardParams rp = cfg.search.reward;
  rp.teacher_latency_ms = cfg.teacher_latency_ms ? *cfg.teacher_latency_ms : table.latency_ms(cfg.teacher.arch);
  rp.validate();
  return rp;
}

struct EvaluatorBundle {
  CandidateEvaluator evaluate;
  nlohmann::json fingerprint;
};

// Same evaluator for search and baseline, so their rewards are comparable.
inline EvaluatorBundle make_evaluator(const RunConfig& cfg, const LatencyTable& table, const RewardParams& rp) {
  EvaluatorBundle b;
  if (cfg.search.mode == SearchMode::surrogate) {
    auto land = std::make_shared<SurrogateLandscape>(surrogate_landscape(cfg.space, table, cfg.landscape, cfg.landscape_seed, rp));
    b.fingerprint = land->fingerprint(cfg.landscape_seed);
    b.evaluate = [land](const ArchState& s, std::uint64_t) { return land->loss_of(s); };
  } else {
    auto corpus = std::make_shared<BatchStream>(make_corpus(cfg));
    auto activations = std::make_shared<TeacherActivations>(make_teacher(cfg, *corpus));
    const auto& d = cfg.document;
    b.fingerprint = {{"teacher", d.at("teacher")}, {"corpus", d.at("corpus")}, {"kd", d.at("kd")}, {"proxy", d.at("proxy")}};
    b.evaluate = [corpus, activations, proxy = cfg.proxy, kd = cfg.kd](const ArchState& s, std::uint64_t seed) {
      return proxy.loss_scale * mini_kd(*activations, s, *corpus, proxy.fraction, proxy.epochs, seed, kd);
    };
  }
  b.fingerprint["latency_source"] = table.environment.source;
  return b;
}

inline CommandResult cmd_latency_table(const RunConfig& cfg) {
  CommandResult r;
  r.files.push_back(write_effective_config(cfg));
  if (cfg.search.jobs > 1) log_info("latency-table runs with jobs=1");
  const auto& path = cfg.latency.table;
  LatencyTable table;
  if (cfg.latency.analytic) {
    table = analytic_latency_table(cfg.space, cfg.teacher.arch, cfg.latency.analytic_teacher_ms);
    table.save(path);
    r.summary = {{"entries", table.size()}, {"source", "analytic"}};
  } else {
    TableBuildReport report;
    table = build_table(cfg.space, cfg.teacher.arch, current_environment(cfg.latency.options.seq_len),
                        timing_measurer(cfg.latency.options), path, &report);
    r.summary = {{"entries", table.size()}, {"measured", report.measured}, {"skipped", report.skipped},
                 {"failed", report.failures.size()}, {"source", "measured"}};
    if (!report.failures.empty()) r.status = kExitRuntime;
  }
  r.summary["teacher_ms"] = table.latency_ms(cfg.teacher.arch);
  r.files.push_back(path);
  r.files.push_back(latency_sidecar(path));
  return r;
}

inline CommandResult cmd_search(const RunConfig& cfg, std::optional<std::size_t> stop_after = std::nullopt) {
  CommandResult r;
  const auto table = require_latency_table(cfg);
  SearchConfig sc = cfg.search;
  sc.reward = resolve_reward(cfg, table);
  const auto bundle = make_evaluator(cfg, table, sc.reward);
  r.files.push_back(write_effective_config(cfg));
  const SearchContext ctx{cfg.space, &table, bundle.evaluate, bundle.fingerprint};
  const auto result = run_search(sc, ctx, {cfg.output_dir, stop_after});
  const auto recommended = recommendation_counts(result.logs);
  const auto topk = cfg.output_dir / "topk.csv", curve = cfg.output_dir / "curve.csv";
  write_file_atomic(topk, topk_csv(result.top, recommended));
  write_file_atomic(curve, reward_curve_csv(result.logs));
  r.files.insert(r.files.end(), {episodes_path(cfg.output_dir), topk, curve});
  r.summary = {{"episodes", result.logs.size()}, {"complete", result.complete},
               {"config_hash", config_hash(search_identity(sc, ctx))}, {"evaluator_hash", config_hash(bundle.fingerprint)}};
  r.summary["top"] = nlohmann::json::array();
  for (const auto& c : result.top) r.summary["top"].push_back(c.to_json());
  const auto summary = cfg.output_dir / "search_summary.json";
  write_file_atomic(summary, r.summary.dump(2) + "\n");
  r.files.push_back(summary);
  return r;
}

namespace detail {

inline void write_history(const std::filesystem::path& path, const LossHistory& h) { write_loss_csv(path, h); }

}  // namespace detail

inline CommandResult cmd_distill(const RunConfig& cfg, const ArchState& student) {
  CommandResult r;
  r.files.push_back(write_effective_config(cfg));
  const auto corpus = make_corpus(cfg);
  TeacherActivations teacher(make_teacher(cfg, corpus));
  const auto split = split_held_out(corpus, kHeldOutFraction, corpus.seed());
  const auto d = distill(teacher, student, split.pool, cfg.kd);
  const double held_out = evaluate_loss(teacher, d, split.held_out, cfg.kd.batch_size);
  const auto model = cfg.output_dir / "student.ckpt", loss = cfg.output_dir / "loss.csv";
  save_model(model, d.student);
  detail::write_history(loss, d.history);
  r.files.insert(r.files.end(), {model, loss});
  r.summary = {{"student", format_state(student)}, {"steps", d.history.size()}, {"held_out_loss", held_out},
               {"train_sequences", split.pool.size()}, {"held_out_sequences", split.held_out.size()}};
  if (!d.history.empty()) r.summary["final_train_loss"] = d.history.back();
  const auto summary = cfg.output_dir / "distill_summary.json";
  write_file_atomic(summary, r.summary.dump(2) + "\n");
  r.files.push_back(summary);
  return r;
}

inline CommandResult cmd_mini_kd(const RunConfig& cfg, const ArchState& student) {
  CommandResult r;
  r.files.push_back(write_effective_config(cfg));
  const auto corpus = make_corpus(cfg);
  TeacherActivations teacher(make_teacher(cfg, corpus));
  const auto rep = mini_kd_report(teacher, student, corpus, cfg.proxy.fraction, cfg.proxy.epochs, cfg.kd.seed, cfg.kd);
  const auto loss = cfg.output_dir / "mini_kd_loss.csv";
  detail::write_history(loss, rep.history);
  r.summary = {{"student", format_state(student)},
               {"held_out_loss", rep.final_loss},
               {"scaled_loss", rep.final_loss * cfg.proxy.loss_scale},
               {"steps", rep.history.size()},
               {"train_sequences", rep.train_sequences},
               {"held_out_sequences", rep.held_out_sequences}};
  const auto summary = cfg.output_dir / "mini_kd.json";
  write_file_atomic(summary, r.summary.dump(2) + "\n");
  r.files.insert(r.files.end(), {loss, summary});
  return r;
}

inline CommandResult cmd_compare_mappings(const RunConfig& cfg) {
  CommandResult r;
  r.files.push_back(write_effective_config(cfg));
  if (cfg.compare_seeds.empty()) throw ConfigError("compare.seeds is empty");
  const auto corpus = make_corpus(cfg);
  TeacherActivations teacher(make_teacher(cfg, corpus));
  const auto split = split_held_out(corpus, kHeldOutFraction, corpus.seed());
  std::string csv = "strategy,seed,held_out_loss,mean,std\n";
  r.summary = nlohmann::json::object();
  for (auto strategy : kAllMappingStrategies) {
    std::vector<double> losses;
    for (auto seed : cfg.compare_seeds) {
      KDRunConfig kd = cfg.kd;
      kd.objective = Objective::hs;
      kd.mapping = strategy;
      kd.seed = seed;
      const auto d = distill(teacher, cfg.compare_student, split.pool, kd);
      losses.push_back(evaluate_loss(teacher, d, split.held_out, kd.batch_size));
    }
    const double mean = mean_of(losses), sd = losses.size() > 1 ? stddev_of(losses) : 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      csv += std::string(mapping_name(strategy)) + ',' + std::to_string(cfg.compare_seeds[i]) + ',' + format_double(losses[i]) +
             ',' + format_double(mean) + ',' + format_double(sd) + '\n';
    }
    r.summary[std::string(mapping_name(strategy))] = {{"mean", mean}, {"std", sd}};
  }
  const auto path = cfg.output_dir / "compare_mappings.csv";
  write_file_atomic(path, csv);
  r.files.push_back(path);
  return r;
}

inline CommandResult cmd_random_baseline(const RunConfig& cfg) {
  CommandResult r;
  const auto table = require_latency_table(cfg);
  const auto rp = resolve_reward(cfg, table);
  const auto bundle = make_evaluator(cfg, table, rp);
  r.files.push_back(write_effective_config(cfg));
  const auto rows = random_baseline(cfg.space, cfg.baseline_per_seed, cfg.baseline_seeds, bundle.evaluate, table, rp,
                                    cfg.search.jobs);
  const auto path = cfg.output_dir / "baseline.csv";
  write_file_atomic(path, baseline_csv(rows));
  r.files.push_back(path);
  r.summary = {{"evaluator_hash", config_hash(bundle.fingerprint)}, {"rows", rows.size()}};
  r.summary["samples"] = nlohmann::json::array();
  for (const auto& row : rows)
    for (const auto& c : row.records) {
      auto j = c.to_json();
      j["seed"] = row.seed;
      r.summary["samples"].push_back(j);
    }
  const auto summary = cfg.output_dir / "baseline_summary.json";
  write_file_atomic(summary, r.summary.dump(2) + "\n");
  r.files.push_back(summary);
  return r;
}

inline std::string calibration_csv(const CalibrationReport& rep) {
  std::string out = "fraction,epochs,cost,spearman,accepted,chosen\n";
  for (const auto& row : rep.rows) {
    out += format_double(row.proxy.fraction) + ',' + std::to_string(row.proxy.epochs) + ',' + format_double(row.proxy.cost()) +
           ',' + format_double(row.correlation) + ',' + (row.accepted ? "1" : "0") + ',' +
           (rep.chosen && *rep.chosen == row.proxy ? "1" : "0") + '\n';
  }
  return out;
}

inline CommandResult cmd_calibrate_proxy(const RunConfig& cfg) {
  CommandResult r;
  r.files.push_back(write_effective_config(cfg));
  const auto corpus = make_corpus(cfg);
  const auto teacher = make_teacher(cfg, corpus);
  auto probes = cfg.calibration.probes;
  if (probes.empty()) probes = sample_random(cfg.space, cfg.calibration.n_probes, cfg.calibration.probe_seed);
  const auto evaluate = mini_kd_evaluator(teacher, corpus, cfg.kd.seed, cfg.kd);
  CalibrationReport rep;
  try {
    rep = calibrate_proxy(probes, cfg.calibration.candidates, cfg.calibration.reference, cfg.calibration.min_correlation, evaluate);
  } catch (const CalibrationFailed& e) {
    rep = e.report();
    log_warning(e.what());
    r.status = kExitRuntime;
  }
  const auto path = cfg.output_dir / "calibration.csv";
  write_file_atomic(path, calibration_csv(rep));
  r.files.push_back(path);
  r.summary["probes"] = nlohmann::json::array();
  for (const auto& p : rep.probes) r.summary["probes"].push_back(format_state(p));
  r.summary["reference_losses"] = rep.reference_losses;
  r.summary["chosen"] = rep.chosen ? nlohmann::json{{"fraction", rep.chosen->fraction}, {"epochs", rep.chosen->epochs}}
                                   : nlohmann::json(nullptr);
  const auto summary = cfg.output_dir / "calibration.json";
  write_file_atomic(summary, r.summary.dump(2) + "\n");
  r.files.push_back(summary);
  return r;
}

}  // namespace kdnas
