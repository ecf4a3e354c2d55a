// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dcomp/harness/bench.hpp"
#include "dcomp/harness/config.hpp"
#include "dcomp/harness/replay.hpp"
#include "dcomp/harness/sweep.hpp"

namespace dcomp::harness {

// Process exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

/// Creates the directory that will hold `path`, if any.
inline void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

/// Writes `text` to `path`, replacing the file.
inline void write_text_file(const std::string& path, const std::string& text) {
  ensure_parent_dir(path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << text;
  if (!os) throw IoError("failed writing: " + path);
}

/// Delay-free rollouts of the scripted policy, saved as a dataset file.
inline gru::TrajectoryDataset cmd_collect(const RunConfig& cfg, const std::string& out,
                                          std::ostream& log) {
  auto ds = env::collect_trajectories(cfg.env, cfg.collect.episodes, cfg.policy);
  ensure_parent_dir(out);
  gru::save_dataset(ds, out);
  log << "collect: " << cfg.collect.episodes << " episodes, " << ds.episodes.size()
      << " agent sequences, " << ds.sample_count() << " samples -> " << out << "\n";
  return ds;
}

/// Trains a transition model; writes the model file and the per-epoch loss curve.
inline gru::TrainResult cmd_train(const RunConfig& cfg, const std::string& out,
                                  std::ostream& log) {
  const auto ds = gru::load_dataset(cfg.train.dataset);
  const auto res = gru::train_transition_model(
      ds, cfg.train.spec, [&](int epoch, double val) {
        log << "epoch " << epoch << " val_nmse " << fmt_real(val) << "\n";
      });
  ensure_parent_dir(out);
  gru::save_model(res.model, out);
  std::ostringstream curve;
  curve << "epoch,val_nmse,train_nmse\n";
  for (std::size_t e = 0; e < res.loss_curve.size(); ++e) {
    curve << e + 1 << ',' << fmt_real(res.loss_curve[e]) << ',' << fmt_real(res.train_curve[e])
          << "\n";
  }
  const std::string curve_path = out == cfg.train.out ? cfg.train.loss_curve : out + ".loss.txt";
  write_text_file(curve_path, curve.str());
  log << "train: model -> " << out << ", loss curve -> " << curve_path << "\n";
  return res;
}

/// Full sweep; writes the results file (and an optional trace) and prints a summary.
inline SweepRun cmd_sweep(const RunConfig& cfg, const std::string& out, int threads,
                          std::ostream& log) {
  SweepRun run = run_sweep(cfg, threads);
  ensure_parent_dir(out);
  save_results(run.records, cfg, out);
  if (!cfg.sweep.trace_out.empty()) {
    ensure_parent_dir(cfg.sweep.trace_out);
    channel::save_trace(run.trace, cfg.sweep.trace_out);
  }
  print_summary(summarize(run.records, cfg.sweep), log);
  log << "sweep: " << run.records.size() << " episodes -> " << out << "\n";
  return run;
}

inline std::vector<LatencyResult> cmd_bench_latency(const RunConfig& cfg, const std::string& out,
                                                    std::ostream& log) {
  const BenchSettings& b = cfg.bench;
  const auto loaded = load_model_for(b.model, "bench.model");
  const gru::TransitionModel model =
      loaded ? *loaded : random_model(b.state_dim, b.hidden_dim, b.seed);
  std::vector<LatencyResult> rs;
  for (int depth : b.depths) rs.push_back(bench_process_step(model, depth, b.calls, b.warmup_calls, b.seed));
  std::ostringstream text;
  write_latency(rs, model.state_dim(), model.hidden_dim(), text);
  if (!out.empty()) write_text_file(out, text.str());
  log << text.str();
  return rs;
}

inline std::vector<ReplayReport> cmd_replay(const RunConfig& cfg, const std::string& out,
                                            std::ostream& log) {
  const ReplaySettings& r = cfg.replay;
  if (r.trace.empty()) throw ConfigError("replay.trace is required");
  bool need_model = false, need_q = false;
  for (auto m : r.modes) {
    need_model = need_model || filter::uses_gru(m);
    need_q = need_q || m == filter::EstimatorMode::NaiveKalman;
  }
  if (need_model && r.model.empty()) throw ConfigError("replay.model is required for GRU modes");
  const auto model = load_model_for(r.model, "replay.model");
  const auto trace = channel::load_trace(r.trace);
  filter::FilterConfig fcfg = filter_config_for(cfg.filter, model.get(), need_q);
  fcfg.layout = env::Env::layout();
  fcfg.dt = cfg.env.dt;
  std::vector<ReplayReport> reps;
  for (auto m : r.modes) reps.push_back(replay_trace(trace, m, model.get(), fcfg));
  std::ostringstream text;
  write_replay(reps, text);
  if (!out.empty()) write_text_file(out, text.str());
  for (const auto& rep : reps) {
    log << "replay " << filter::to_string(rep.mode) << ": mean estimate MSE "
        << fmt_real(rep.mean_mse) << " over " << rep.step_mse.size() << " steps, " << rep.pairs
        << " pairs\n";
  }
  return reps;
}

}  // namespace dcomp::harness
