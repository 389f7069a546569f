#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "kdnas/commands.hpp"

namespace kdnas {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("kdnas_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

json surrogate_config(const fs::path& dir) {
  return {{"output_dir", (dir / "out").string()},
          {"latency", {{"analytic", true}, {"table", (dir / "latency.csv").string()}}},
          {"search", {{"episodes", 5}, {"candidates", 8}}}};
}

json desk_config(const fs::path& dir) {
  return {{"output_dir", (dir / "out").string()},
          {"space", "desk"},
          {"corpus", {{"n_sequences", 120}, {"vocab_size", 64}, {"seq_len", 8}}},
          {"kd", {{"batch_size", 16}}},
          {"proxy", {{"fraction", 0.5}, {"epochs", 1}, {"loss_scale", 0.05}}},
          {"search", {{"mode", "real_kd"}, {"episodes", 2}, {"candidates", 3}, {"recommendations", 1}}},
          {"latency", {{"table", (dir / "latency.csv").string()}, {"n_samples", 20}, {"n_runs", 1}}},
          {"baseline", {{"per_seed", 2}, {"seeds", {1}}}},
          {"compare", {{"student", "2,2,16,64,gelu"}, {"seeds", {0, 1}}}}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KDNAS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

TEST(Config, DefaultsParse) {
  const auto cfg = parse_run_config(merge_config(json::object()));
  EXPECT_EQ(cfg.space.size(), 2400u);
  EXPECT_EQ(cfg.teacher.arch, paper_teacher());
  EXPECT_EQ(cfg.search.episodes, 15u);
  EXPECT_EQ(cfg.search.candidates, 20u);
  EXPECT_DOUBLE_EQ(cfg.search.reward.alpha, -0.06);
  EXPECT_DOUBLE_EQ(cfg.search.reward.beta, 0.6);
  EXPECT_DOUBLE_EQ(cfg.kd.peak_lr, 8e-4);
  EXPECT_DOUBLE_EQ(cfg.search.controller.lr, 1e-4);
  EXPECT_EQ(cfg.latency.options.seq_len, cfg.corpus.seq_len);
}

TEST(Config, DeskSpaceUsesDeskTeacher) {
  const auto cfg = parse_run_config(merge_config({{"space", "desk"}}));
  EXPECT_EQ(cfg.space.size(), 24u);
  EXPECT_EQ(cfg.teacher.arch, desk_teacher());
}

TEST(Config, UnknownKeysAndTypeChangesRejected) {
  EXPECT_THROW(merge_config({{"serch", {{"episodes", 3}}}}), ConfigError);
  EXPECT_THROW(merge_config({{"search", {{"episodes", "many"}}}}), ConfigError);
  EXPECT_THROW(merge_config({{"search", 3}}), ConfigError);
  EXPECT_NO_THROW(merge_config({{"reward", {{"teacher_latency_ms", 12.5}}}}));
  EXPECT_NO_THROW(merge_config({{"space", {{"layers", {2}}, {"heads", {2}}, {"hidden", {16}}, {"intermediate", {64}},
                                           {"activations", {"gelu"}}}}}));
}

TEST(Config, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(parse_run_config(merge_config({{"search", {{"mode", "magic"}}}})), ConfigError);
  EXPECT_THROW(parse_run_config(merge_config({{"reward", {{"beta", 0.0}}}})), ConfigError);
  EXPECT_THROW(parse_run_config(merge_config({{"proxy", {{"fraction", 1.5}}}})), ConfigError);
  EXPECT_THROW(parse_run_config(merge_config({{"space", "huge"}})), ConfigError);
  EXPECT_THROW(parse_run_config(merge_config({{"search", {{"episodes", 0}}}})), ConfigError);
}

TEST(Config, OverridesParseJsonOrString) {
  auto doc = merge_config(json::object());
  apply_override(doc, "search.episodes=4");
  apply_override(doc, "search.mode=real_kd");
  apply_override(doc, "baseline.seeds=[5,6]");
  const auto cfg = parse_run_config(doc);
  EXPECT_EQ(cfg.search.episodes, 4u);
  EXPECT_EQ(cfg.search.mode, SearchMode::real_kd);
  EXPECT_EQ(cfg.baseline_seeds, (std::vector<std::uint64_t>{5, 6}));
  EXPECT_THROW(apply_override(doc, "search.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "noequals"), ConfigError);
}

TEST(Config, MissingOrBrokenFileIsConfigError) {
  const auto dir = scratch("badfile");
  EXPECT_THROW(load_run_config(dir / "absent.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{not json";
  EXPECT_THROW(load_run_config(dir / "broken.json"), ConfigError);
}

TEST(Config, RelativeOutputResolvesAgainstRoot) {
  const auto dir = scratch("root");
  ::setenv(kOutputRootEnv, dir.c_str(), 1);
  const auto cfg = parse_run_config(merge_config({{"output_dir", "x/y"}}));
  ::unsetenv(kOutputRootEnv);
  EXPECT_EQ(cfg.output_dir, dir / "x/y");
}

TEST(Commands, SurrogateSmokeSearchWritesArtifacts) {
  const auto dir = scratch("smoke");
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = parse_run_config(merge_config(surrogate_config(dir)));
  const auto r = cmd_search(cfg);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
  EXPECT_EQ(r.status, kExitOk);
  for (const char* f : {"episodes.jsonl", "topk.csv", "curve.csv", "effective_config.json", "search_summary.json"}) {
    EXPECT_TRUE(fs::exists(cfg.output_dir / f)) << f;
  }
  const auto logs = read_episode_logs(episodes_path(cfg.output_dir));
  ASSERT_EQ(logs.size(), 5u);
  for (const auto& log : logs) EXPECT_EQ(log.candidates.size(), 8u);
  const auto curve = read_file(cfg.output_dir / "curve.csv");
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 6);
  const auto topk = read_file(cfg.output_dir / "topk.csv");
  EXPECT_EQ(std::count(topk.begin(), topk.end(), '\n'), 4);
  const auto eff = json::parse(read_file(cfg.output_dir / "effective_config.json"));
  EXPECT_EQ(eff.at("config_hash"), cfg.hash());
}

TEST(Commands, RerunningACompletedSearchChangesNothing) {
  const auto dir = scratch("rerun");
  const auto cfg = parse_run_config(merge_config(surrogate_config(dir)));
  cmd_search(cfg);
  const auto before = read_file(episodes_path(cfg.output_dir));
  cmd_search(cfg);
  EXPECT_EQ(read_file(episodes_path(cfg.output_dir)), before);
}

TEST(Commands, SearchAndBaselineShareTheEvaluator) {
  const auto dir = scratch("shared");
  const auto cfg = parse_run_config(merge_config(surrogate_config(dir)));
  const auto s = cmd_search(cfg);
  const auto b = cmd_random_baseline(cfg);
  EXPECT_EQ(s.summary.at("evaluator_hash"), b.summary.at("evaluator_hash"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "baseline.csv"));
}

TEST(Commands, MissingLatencyTableIsAMissingArtifact) {
  const auto dir = scratch("nolat");
  auto j = surrogate_config(dir);
  j["latency"]["analytic"] = false;
  const auto cfg = parse_run_config(merge_config(j));
  try {
    cmd_search(cfg);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_NE(std::string(e.what()).find("latency-table"), std::string::npos);
  }
}

TEST(Commands, DeskRealKdPipeline) {
  const auto dir = scratch("desk");
  const auto cfg = parse_run_config(merge_config(desk_config(dir)));
  const auto lat = cmd_latency_table(cfg);
  EXPECT_EQ(lat.status, kExitOk);
  EXPECT_EQ(LatencyTable::load(cfg.latency.table).size(), 25u);

  const auto s = cmd_search(cfg);
  EXPECT_EQ(s.status, kExitOk);
  const auto logs = read_episode_logs(episodes_path(cfg.output_dir));
  ASSERT_EQ(logs.size(), 2u);
  for (const auto& log : logs)
    for (const auto& c : log.candidates) {
      EXPECT_FALSE(c.failed);
      EXPECT_TRUE(c.loss && std::isfinite(*c.loss));
    }

  const auto student = parse_state("2,2,16,64,gelu");
  const auto d = cmd_distill(cfg, student);
  const auto model = load_model(cfg.output_dir / "student.ckpt");
  EXPECT_EQ(model.arch(), student);
  EXPECT_TRUE(std::isfinite(d.summary.at("held_out_loss").get<double>()));

  const auto m = cmd_mini_kd(cfg, student);
  EXPECT_NEAR(m.summary.at("scaled_loss").get<double>(), 0.05 * m.summary.at("held_out_loss").get<double>(), 1e-15);

  const auto cmp = cmd_compare_mappings(cfg);
  const auto csv = read_file(cfg.output_dir / "compare_mappings.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 4 * 2);
  EXPECT_EQ(cmp.summary.size(), 4u);
}

TEST(Commands, MiniKdIsReproducible) {
  const auto dir = scratch("mkd");
  const auto cfg = parse_run_config(merge_config(desk_config(dir)));
  const auto student = parse_state("2,4,32,64,relu");
  const auto a = cmd_mini_kd(cfg, student), b = cmd_mini_kd(cfg, student);
  EXPECT_EQ(a.summary.at("held_out_loss"), b.summary.at("held_out_loss"));
}

TEST(Commands, MissingTeacherCheckpointIsAMissingArtifact) {
  const auto dir = scratch("noteacher");
  auto j = desk_config(dir);
  j["teacher"] = {{"checkpoint", (dir / "absent.ckpt").string()}};
  const auto cfg = parse_run_config(merge_config(j));
  EXPECT_THROW(cmd_mini_kd(cfg, parse_state("2,2,16,64,gelu")), MissingArtifact);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("exit");
  const auto good = write_config(dir, surrogate_config(dir));
  EXPECT_EQ(run_cli("search --config " + good.string()), 0);
  EXPECT_EQ(run_cli("search"), 2);
  EXPECT_EQ(run_cli("frobnicate --config " + good.string()), 2);
  EXPECT_EQ(run_cli("search --config " + good.string() + " --set search.bogus=1"), 2);
  EXPECT_EQ(run_cli("distill --config " + good.string() + " --state 2,2,16"), 2);
  EXPECT_EQ(run_cli("search --config " + good.string() + " --set seed=9"), 2);  // existing log, different config

  auto nolat = surrogate_config(dir / "b");
  nolat["latency"]["analytic"] = false;
  fs::create_directories(dir / "b");
  EXPECT_EQ(run_cli("search --config " + write_config(dir / "b", nolat).string()), 3);
}

}  // namespace
}  // namespace kdnas
