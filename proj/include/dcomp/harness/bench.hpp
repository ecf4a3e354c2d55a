// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ostream>
#include <random>
#include <vector>

#include "dcomp/filter/estimator.hpp"
#include "dcomp/gru/model.hpp"

namespace dcomp::harness {

struct LatencyResult {
  int depth = 0;
  int calls = 0;
  double mean_us = 0.0;
  double median_us = 0.0;
  double p99_us = 0.0;
};

/// Untrained model of the given size; latency does not depend on the weights.
inline gru::TransitionModel random_model(int state_dim, int hidden_dim, std::uint64_t seed) {
  gru::TransitionModel m;
  m.params = gru::GruParams::random_uniform(state_dim, hidden_dim, seed);
  m.normalizer = gru::Normalizer::identity(state_dim);
  m.train_mse = Vec::Constant(state_dim, 1e-3);
  return m;
}

/**
 * Times NeighborEstimator::process_step when every call assimilates one
 * packet that is `depth` steps old, so each call is one predict/update pair
 * followed by a `depth`-step rollout.
 */
inline LatencyResult bench_process_step(const gru::TransitionModel& model, int depth, int calls,
                                        int warmup_calls, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  const int d = model.state_dim();
  const auto cfg = filter::FilterConfig::from_training_mse(model.train_mse);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec> pool(64, Vec(d));
  for (auto& v : pool)
    for (int k = 0; k < d; ++k) v[k] = g(rng);

  filter::NeighborEstimator<filter::GruDynamics> est(
      filter::GruDynamics{&model}, cfg, filter::initial_belief(pool[0], cfg, model.hidden_dim()));
  std::vector<double> us;
  us.reserve(static_cast<std::size_t>(calls));
  Packet p;
  p.sender = 1;
  const int total = warmup_calls + calls;
  for (int k = 0; k < total; ++k) {
    p.send_stamp = k;
    p.payload = pool[static_cast<std::size_t>(k) % pool.size()];
    const auto t0 = Clock::now();
    est.process_step(std::span<const Packet>(&p, 1), k + depth);
    const auto t1 = Clock::now();
    if (k >= warmup_calls) us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  LatencyResult r;
  r.depth = depth;
  r.calls = calls;
  double sum = 0.0;
  for (double x : us) sum += x;
  r.mean_us = sum / static_cast<double>(us.size());
  std::sort(us.begin(), us.end());
  r.median_us = us[us.size() / 2];
  r.p99_us = us[std::min(us.size() - 1, static_cast<std::size_t>(0.99 * static_cast<double>(us.size())))];
  return r;
}

inline void write_latency(const std::vector<LatencyResult>& rs, int state_dim, int hidden_dim,
                          std::ostream& os) {
  char line[160];
  os << "# process_step latency, state_dim " << state_dim << ", hidden_dim " << hidden_dim << "\n";
  os << "depth,calls,mean_us,median_us,p99_us\n";
  for (const auto& r : rs) {
    std::snprintf(line, sizeof line, "%d,%d,%.3f,%.3f,%.3f\n", r.depth, r.calls, r.mean_us,
                  r.median_us, r.p99_us);
    os << line;
  }
}

}  // namespace dcomp::harness
