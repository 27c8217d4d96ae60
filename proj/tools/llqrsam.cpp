// Command-line driver: run experiment configs, verify, list.
//
// Exit codes: 0 ok, 1 config error, 2 run aborted, 3 verification failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "llqrsam/llqrsam.hpp"

namespace fs = std::filesystem;
using namespace llqrsam;
using namespace llqrsam::harness;

namespace {

enum Exit : int { kOk = 0, kConfigError = 1, kAborted = 2, kVerifyFailed = 3 };

int cmd_run(const std::string& config, const fs::path& out, const std::uint64_t* seed,
            std::size_t jobs) {
  ExperimentConfig c;
  try {
    c = load_config(config);
    if (seed) c = with_seed(std::move(c), *seed);
    ensure_dir(out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const OutputError& e) {
    std::cerr << "output error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    const auto o = run_experiment(c, out, jobs);
    std::cout << c.experiment << " seed=" << c.seed << " config_hash=" << c.hash << "\n";
    for (const auto& f : o.files) std::cout << "  wrote " << (out / f).string() << "\n";
    if (!o.aborted.empty()) {
      for (const auto& a : o.aborted) std::cerr << "run aborted: " << a << "\n";
      return kAborted;
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const OutputError& e) {
    std::cerr << "output error: " << e.what() << "\n";
    return kConfigError;
  } catch (const StepAborted& e) {
    std::cerr << "run aborted: " << e.what() << "\n";
    return kAborted;
  }
}

int cmd_verify(const fs::path& out, std::size_t jobs) {
  try {
    ensure_dir(out);
  } catch (const OutputError& e) {
    std::cerr << "output error: " << e.what() << "\n";
    return kConfigError;
  }
  const auto specs = all_checks();
  const auto outcomes = run_checks(specs, jobs);
  for (const auto& o : outcomes) {
    const char* tag = o.result.passed ? "PASS" : (o.spec->known_unattainable ? "FAIL*" : "FAIL");
    std::printf("%-6s %-26s %8.3fs  %s\n", tag, o.spec->id.c_str(), o.runtime_s,
                o.spec->title.c_str());
  }
  try {
    write_file(out / "report.json", dump_json(report_json(outcomes)));
    write_file(out / "timings.json", dump_json(timings_json(outcomes)));
  } catch (const OutputError& e) {
    std::cerr << "output error: " << e.what() << "\n";
    return kConfigError;
  }
  const bool ok = overall_pass(outcomes);
  std::printf("%s (FAIL* = known unattainable, not counted)\n", ok ? "verify: pass" : "verify: FAIL");
  return ok ? kOk : kVerifyFailed;
}

int cmd_list() {
  std::printf("experiments:\n");
  for (const auto& e : kExperiments)
    std::printf("  %-20s criteria %-6s %s\n", e.tag, e.criteria, e.summary);
  std::printf("checks:\n");
  for (const auto& s : all_checks()) {
    if (s.criterion) std::printf("  [%2d] %-24s %s\n", s.criterion, s.id.c_str(), s.title.c_str());
    else std::printf("  [--] %-24s %s\n", s.id.c_str(), s.title.c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"llqrsam: LLQR-preconditioned SAM experiments and verification"};
  app.require_subcommand(1);

  std::string out = "out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  app.add_option("--out", out, "output directory");
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  std::string config;
  auto* run = app.add_subcommand("run", "run one experiment config");
  run->add_option("config", config, "experiment config (JSON)")->required();
  auto* verify = app.add_subcommand("verify", "run acceptance and property checks");
  auto* list = app.add_subcommand("list", "list experiments and checks");
  // Flags are accepted after the subcommand as well.
  for (auto* sub : {run, verify}) sub->fallthrough();
  list->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  if (*run) return cmd_run(config, out, *seed_opt ? &seed : nullptr, jobs);
  if (*verify) return cmd_verify(out, jobs);
  if (*list) return cmd_list();
  return kConfigError;
}
