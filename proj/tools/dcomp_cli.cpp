// SPDX-License-Identifier: Apache-2.0
// Command-line driver: collect, train, sweep, bench-latency, replay.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dcomp/harness/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  long long seed_offset = 0;
  int threads = 1;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help,
                      CommonFlags& flags) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", flags.config, "JSON run configuration")->required();
  sub->add_option("--out", flags.out, "output path (overrides the config)");
  sub->add_option("--seed-offset", flags.seed_offset, "added to every seed in the config");
  sub->add_option("--threads", flags.threads, "worker threads for sweeps")
      ->check(CLI::PositiveNumber);
  return sub;
}

int run(const std::string& command, const CommonFlags& flags) {
  using namespace dcomp::harness;
  RunConfig cfg = load_config(flags.config);
  cfg.apply_seed_offset(flags.seed_offset);
  auto out_or = [&](const std::string& dflt) { return flags.out.empty() ? dflt : flags.out; };
  if (command == "collect") {
    cmd_collect(cfg, out_or(cfg.collect.out), std::cout);
  } else if (command == "train") {
    cmd_train(cfg, out_or(cfg.train.out), std::cout);
  } else if (command == "sweep") {
    cmd_sweep(cfg, out_or(cfg.sweep.out), flags.threads, std::cout);
  } else if (command == "bench-latency") {
    cmd_bench_latency(cfg, out_or(cfg.bench.out), std::cout);
  } else if (command == "replay") {
    cmd_replay(cfg, out_or(cfg.replay.out), std::cout);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace dcomp::harness;
  CLI::App app{"Delay-compensated belief estimation for multi-agent control"};
  app.require_subcommand(1);
  CommonFlags flags;
  for (const auto& [name, help] : std::initializer_list<std::pair<const char*, const char*>>{
           {"collect", "collect delay-free trajectories of the scripted policy"},
           {"train", "train the GRU transition model on a dataset"},
           {"sweep", "run the delay/loss/noise/mode sweep and write per-episode results"},
           {"bench-latency", "time the per-step filter with a fixed rollout depth"},
           {"replay", "re-run estimators over a recorded channel trace"}}) {
    add_command(app, name, help, flags);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, flags);
  } catch (const dcomp::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dcomp::UsageError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dcomp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const dcomp::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const dcomp::LoadError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
