#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kdnas/commands.hpp"

namespace {

using namespace kdnas;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::size_t> jobs;
  std::string state;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c, bool with_state) {
  sub->add_option("--config", c.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "override a config value, e.g. --set search.episodes=5");
  sub->add_option("--jobs", c.jobs, "parallel candidate evaluations")->check(CLI::PositiveNumber);
  sub->add_flag("-q,--quiet", c.quiet, "only print warnings and errors");
  if (with_state) sub->add_option("--state", c.state, "student architecture L,H,D,F,act")->required();
}

RunConfig load(const Common& c) {
  auto overrides = c.overrides;
  if (c.jobs) overrides.push_back("search.jobs=" + std::to_string(*c.jobs));
  return load_run_config(c.config, overrides);
}

void report(const CommandResult& r) {
  std::cout << r.summary.dump(2) << '\n';
  for (const auto& f : r.files) std::cout << "wrote " << f.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdnas: latency-aware architecture search for distilled encoders"};
  app.require_subcommand(1);
  Common c;
  auto* lat = app.add_subcommand("latency-table", "measure (or model) per-architecture CPU latency");
  auto* search = app.add_subcommand("search", "run the episodic search");
  auto* dist = app.add_subcommand("distill", "distill one student on the full training pool");
  auto* mini = app.add_subcommand("mini-kd", "run the reduced distillation proxy for one student");
  auto* cmp = app.add_subcommand("compare-mappings", "compare layer mapping strategies");
  auto* base = app.add_subcommand("random-baseline", "score uniform random architectures");
  auto* cal = app.add_subcommand("calibrate-proxy", "pick the cheapest proxy that ranks like full training");
  for (auto* sub : {lat, search, cmp, base, cal}) add_common(sub, c, false);
  for (auto* sub : {dist, mini}) add_common(sub, c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  if (c.quiet) set_log_level(LogLevel::warning);

  try {
    const auto cfg = load(c);
    CommandResult r;
    if (*lat) r = cmd_latency_table(cfg);
    else if (*search) r = cmd_search(cfg);
    else if (*dist) r = cmd_distill(cfg, parse_state(c.state));
    else if (*mini) r = cmd_mini_kd(cfg, parse_state(c.state));
    else if (*cmp) r = cmd_compare_mappings(cfg);
    else if (*base) r = cmd_random_baseline(cfg);
    else r = cmd_calibrate_proxy(cfg);
    report(r);
    return r.status;
  } catch (const ConfigMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
