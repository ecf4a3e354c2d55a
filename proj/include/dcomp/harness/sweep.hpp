// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "dcomp/harness/config.hpp"
#include "dcomp/harness/episode.hpp"
#include "dcomp/seeding.hpp"

namespace dcomp::harness {

inline constexpr int kResultsVersion = 1;
inline constexpr const char* kResultsColumns =
    "env,mode,delay,loss_prob,noise_frac,seed,episode,return,estimate_mse,mean_rollout_depth,"
    "step_us";

struct Cell {
  int delay = 0;
  double loss_prob = 0.0;
  double noise_frac = 0.0;
  filter::EstimatorMode mode = filter::EstimatorMode::GruKalman;
};

struct EpisodeRecord {
  Cell cell;
  std::uint64_t seed = 0;
  int episode = 0;
  double ret = 0.0;
  double estimate_mse = 0.0;
  double mean_rollout_depth = 0.0;
  std::optional<double> step_us;  // only when timing is enabled
};

/// Cells in config order: delay, then loss, then noise, then mode.
inline std::vector<Cell> sweep_cells(const SweepSettings& s) {
  std::vector<Cell> cells;
  for (int d : s.delays)
    for (double l : s.loss_probs)
      for (double f : s.noise_fracs)
        for (auto m : s.modes) cells.push_back({d, l, f, m});
  return cells;
}

/// Episode seeds shared by every cell, so conditions are compared on the
/// same spawns, noise draws and channel streams.
inline std::uint64_t episode_env_seed(std::uint64_t base, std::uint64_t seed, int episode) {
  return derive_seed(base, {seed, static_cast<std::uint64_t>(episode)});
}
inline std::uint64_t episode_channel_seed(std::uint64_t base, std::uint64_t seed, int episode) {
  return derive_seed(base, {seed, static_cast<std::uint64_t>(episode), 0xc4a77e1ULL});
}

inline std::shared_ptr<const gru::TransitionModel> load_model_for(const std::string& path,
                                                                  const char* what) {
  if (path.empty()) return nullptr;
  if (!std::filesystem::exists(path)) {
    throw ConfigError(std::string(what) + ": model file does not exist: " + path);
  }
  return std::make_shared<const gru::TransitionModel>(gru::load_model(path));
}

/// Filter settings for a run: Q from the model's training MSE when a model is
/// available, otherwise from filter.naive_process_var.
inline filter::FilterConfig filter_config_for(const FilterSettings& fs,
                                              const gru::TransitionModel* model, bool need_q) {
  Vec q;
  if (model != nullptr) {
    q = model->train_mse;
  } else if (!fs.naive_process_var.empty()) {
    q = Eigen::Map<const Vec>(fs.naive_process_var.data(),
                              static_cast<Eigen::Index>(fs.naive_process_var.size()));
  } else if (need_q) {
    throw ConfigError("NaiveKalman without a model needs filter.naive_process_var");
  } else {
    q = Vec::Ones(env::kStateDim);  // unused by the zero-order hold
  }
  if (q.size() != env::kStateDim) {
    throw ConfigError("process variance has " + std::to_string(q.size()) + " entries, expected " +
                      std::to_string(env::kStateDim));
  }
  auto cfg = filter::FilterConfig::from_training_mse(q, fs.rho, fs.p0_scale, fs.process_var_floor);
  cfg.naive_damping = fs.naive_damping;
  return cfg;
}

struct SweepRun {
  std::vector<EpisodeRecord> records;
  std::vector<channel::TraceRecord> trace;  // first episode of the first cell, if requested
};

/**
 * Runs the full (cell x seed x episode) product. Work is split over
 * (cell, seed) pairs; each pair runs its episodes sequentially and the
 * records are merged in config order whatever the completion order.
 * Configuration problems (such as a missing model) are reported before any
 * episode runs.
 */
inline SweepRun run_sweep(const RunConfig& cfg, int threads = 1) {
  const SweepSettings& s = cfg.sweep;
  const auto cells = sweep_cells(s);
  bool need_model = false, need_naive_q = false;
  for (const auto& c : cells) {
    need_model = need_model || filter::uses_gru(c.mode);
    need_naive_q = need_naive_q || c.mode == filter::EstimatorMode::NaiveKalman;
  }
  if (need_model && s.model.empty()) {
    throw ConfigError("sweep.model is required for the GruKalman and GruOnly modes");
  }
  const auto model = load_model_for(s.model, "sweep.model");
  const filter::FilterConfig fcfg = filter_config_for(cfg.filter, model.get(), need_naive_q);
  for (const auto& c : cells) cfg.channel.build(c.delay, c.loss_prob, 0);  // validate up front

  const std::size_t n_seeds = s.seeds.size();
  const std::size_t n_jobs = cells.size() * n_seeds;
  const auto per_job = static_cast<std::size_t>(s.episodes_per_seed);
  SweepRun run;
  run.records.resize(n_jobs * per_job);
  const bool want_trace = !s.trace_out.empty();

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t job = next.fetch_add(1);
      if (job >= n_jobs) return;
      {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (failure) return;
      }
      try {
        const Cell& cell = cells[job / n_seeds];
        const std::uint64_t seed = s.seeds[job % n_seeds];
        for (int e = 0; e < s.episodes_per_seed; ++e) {
          EpisodeSetup setup;
          setup.env = cfg.env;
          setup.env.seed = episode_env_seed(cfg.env.seed, seed, e);
          setup.env.obs_noise_frac = cell.noise_frac;
          setup.channel =
              cfg.channel.build(cell.delay, cell.loss_prob, episode_channel_seed(cfg.env.seed, seed, e));
          setup.mode = cell.mode;
          setup.model = model.get();
          setup.filter = fcfg;
          setup.warmup = s.warmup;
          setup.timing = s.timing;
          setup.gains = cfg.policy;
          setup.record_trace = want_trace && job == 0 && e == 0;
          EpisodeOutcome o = run_episode(setup);
          EpisodeRecord& r = run.records[job * per_job + static_cast<std::size_t>(e)];
          r.cell = cell;
          r.seed = seed;
          r.episode = e;
          r.ret = o.ret;
          r.estimate_mse = o.estimate_mse;
          r.mean_rollout_depth = o.mean_rollout_depth;
          if (s.timing) r.step_us = o.step_us;
          if (setup.record_trace) run.trace = std::move(o.trace);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(n_jobs)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return run;
}

// ------------------------------------------------------------------ results

inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_results(const std::vector<EpisodeRecord>& records, const RunConfig& cfg,
                          std::ostream& os) {
  os << "# dcomp-results " << kResultsVersion << "\n";
  os << "# config " << resolved_sweep_json(cfg).dump() << "\n";
  os << kResultsColumns << "\n";
  const std::string env_name(env::to_string(cfg.env.kind));
  for (const auto& r : records) {
    os << env_name << ',' << filter::to_string(r.cell.mode) << ',' << r.cell.delay << ','
       << fmt_real(r.cell.loss_prob) << ',' << fmt_real(r.cell.noise_frac) << ',' << r.seed << ','
       << r.episode << ',' << fmt_real(r.ret) << ',' << fmt_real(r.estimate_mse) << ','
       << fmt_real(r.mean_rollout_depth) << ',' << (r.step_us ? fmt_real(*r.step_us) : "NA")
       << "\n";
  }
}

inline void save_results(const std::vector<EpisodeRecord>& records, const RunConfig& cfg,
                         const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open results for writing: " + path);
  write_results(records, cfg, os);
  if (!os) throw IoError("failed writing results: " + path);
}

// ------------------------------------------------------------------ summary

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  double se() const { return n == 0 ? 0.0 : std / std::sqrt(static_cast<double>(n)); }
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  s.n = xs.size();
  if (s.n == 0) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

/// Standard error of the difference of two independent sample means.
inline double pooled_se(const SampleStats& a, const SampleStats& b) {
  return std::sqrt(a.se() * a.se() + b.se() * b.se());
}

inline bool same_condition(const Cell& a, const Cell& b) {
  return a.delay == b.delay && a.loss_prob == b.loss_prob && a.noise_frac == b.noise_frac;
}

/// Returns of every episode in cells matching (delay, loss, noise, mode).
inline std::vector<double> returns_of(const std::vector<EpisodeRecord>& rs, const Cell& c) {
  std::vector<double> out;
  for (const auto& r : rs)
    if (same_condition(r.cell, c) && r.cell.mode == c.mode) out.push_back(r.ret);
  return out;
}

struct CellSummary {
  Cell cell;
  SampleStats ret;
  SampleStats estimate_mse;
  std::optional<double> normalized;  // 0 = delayed baseline, 1 = delay-free
};

/**
 * Per-cell mean/std. Returns are also normalized per seed to the interval
 * [NoCompensation at the same delay/loss/noise, NoCompensation with no delay
 * and no loss at the same noise] when the sweep contains both references.
 */
inline std::vector<CellSummary> summarize(const std::vector<EpisodeRecord>& rs,
                                          const SweepSettings& s) {
  std::map<std::tuple<int, double, double, int, std::uint64_t>, std::vector<double>> per_seed;
  for (const auto& r : rs) {
    per_seed[{r.cell.delay, r.cell.loss_prob, r.cell.noise_frac, static_cast<int>(r.cell.mode),
              r.seed}]
        .push_back(r.ret);
  }
  auto seed_mean = [&](int d, double l, double f, filter::EstimatorMode m,
                       std::uint64_t seed) -> std::optional<double> {
    auto it = per_seed.find({d, l, f, static_cast<int>(m), seed});
    if (it == per_seed.end()) return std::nullopt;
    return sample_stats(it->second).mean;
  };

  std::vector<CellSummary> out;
  for (const auto& c : sweep_cells(s)) {
    CellSummary cs;
    cs.cell = c;
    std::vector<double> mse;
    for (const auto& r : rs)
      if (same_condition(r.cell, c) && r.cell.mode == c.mode) mse.push_back(r.estimate_mse);
    cs.ret = sample_stats(returns_of(rs, c));
    cs.estimate_mse = sample_stats(mse);
    std::vector<double> norm;
    for (std::uint64_t seed : s.seeds) {
      const auto v = seed_mean(c.delay, c.loss_prob, c.noise_frac, c.mode, seed);
      const auto base = seed_mean(c.delay, c.loss_prob, c.noise_frac,
                                  filter::EstimatorMode::NoCompensation, seed);
      const auto free = seed_mean(0, 0.0, c.noise_frac, filter::EstimatorMode::NoCompensation, seed);
      if (v && base && free && std::abs(*free - *base) > 1e-12) {
        norm.push_back((*v - *base) / (*free - *base));
      }
    }
    if (norm.size() == s.seeds.size()) cs.normalized = sample_stats(norm).mean;
    out.push_back(cs);
  }
  return out;
}

inline void print_summary(const std::vector<CellSummary>& cells, std::ostream& os) {
  char line[256];
  std::snprintf(line, sizeof line, "%-15s %6s %6s %6s %12s %10s %8s %12s %10s\n", "mode", "delay",
                "loss", "noise", "return", "std", "n", "est_mse", "normalized");
  os << line;
  for (const auto& c : cells) {
    char norm[32] = "-";
    if (c.normalized) std::snprintf(norm, sizeof norm, "%.3f", *c.normalized);
    std::snprintf(line, sizeof line, "%-15s %6d %6.3g %6.3g %12.4f %10.4f %8zu %12.4g %10s\n",
                  std::string(filter::to_string(c.cell.mode)).c_str(), c.cell.delay,
                  c.cell.loss_prob, c.cell.noise_frac, c.ret.mean, c.ret.std, c.ret.n,
                  c.estimate_mse.mean, norm);
    os << line;
  }
}

}  // namespace dcomp::harness
