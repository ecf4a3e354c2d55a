// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dcomp/channel/channel.hpp"
#include "dcomp/filter/estimator.hpp"
#include "dcomp/harness/sweep.hpp"

namespace dcomp::harness {

struct ReplayReport {
  filter::EstimatorMode mode = filter::EstimatorMode::GruKalman;
  std::vector<double> step_mse;  // per control step, mean over (receiver, sender) pairs
  double mean_mse = 0.0;
  std::size_t pairs = 0;
};

/**
 * Re-runs one estimator per (receiver, sender) pair over a recorded channel
 * trace and scores it against the recorded ground truth. Packets are handed
 * over at their recorded arrival step in send order; each estimator starts
 * from the sender's true state at stamp 0.
 */
inline ReplayReport replay_trace(const std::vector<channel::TraceRecord>& trace,
                                 filter::EstimatorMode mode, const gru::TransitionModel* model,
                                 filter::FilterConfig cfg) {
  if (trace.empty()) throw LoadError("replay: trace has no records");
  std::map<std::pair<AgentId, std::int64_t>, Vec> truth;  // (sender, stamp) -> state
  std::map<std::pair<AgentId, AgentId>, std::map<std::int64_t, std::vector<Packet>>> arrivals;
  std::int64_t horizon = 0;
  for (const auto& r : trace) {
    if (r.truth.size() == 0) throw LoadError("replay: trace has no ground-truth columns");
    truth[{r.sender, r.send_stamp}] = r.truth;
    auto& per_pair = arrivals[{r.receiver, r.sender}];
    horizon = std::max(horizon, r.send_stamp);
    if (r.dropped) continue;
    Packet p;
    p.sender = r.sender;
    p.receiver = r.receiver;
    p.payload = r.payload;
    p.send_stamp = r.send_stamp;
    per_pair[r.arrival_stamp].push_back(std::move(p));
  }
  const int d = static_cast<int>(trace.front().payload.size());
  if (model != nullptr && model->state_dim() != d) {
    throw ConfigError("replay: model state dimension does not match the trace");
  }
  if (cfg.dim() != d) throw ConfigError("replay: filter dimension does not match the trace");
  const int hidden = model != nullptr ? model->hidden_dim() : 1;

  std::vector<std::pair<AgentId, AgentId>> keys;
  std::vector<filter::AnyEstimator> est;
  for (const auto& [key, _] : arrivals) {
    auto spawn = truth.find({key.second, 0});
    if (spawn == truth.end()) {
      throw LoadError("replay: sender " + std::to_string(key.second) + " has no record at stamp 0");
    }
    keys.push_back(key);
    est.push_back(filter::AnyEstimator::make(mode, model, cfg,
                                             filter::initial_belief(spawn->second, cfg, hidden, 0)));
  }

  ReplayReport rep;
  rep.mode = mode;
  rep.pairs = keys.size();
  double total = 0.0;
  std::size_t terms = 0;
  for (std::int64_t now = 0; now <= horizon; ++now) {
    double step_sum = 0.0;
    std::size_t step_terms = 0;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      std::vector<Packet> pk;
      auto& per_pair = arrivals[keys[k]];
      if (auto it = per_pair.find(now); it != per_pair.end()) pk = it->second;
      std::sort(pk.begin(), pk.end(),
                [](const Packet& a, const Packet& b) { return a.send_stamp < b.send_stamp; });
      const filter::Belief& b = est[k].process_step(pk, now);
      auto t = truth.find({keys[k].second, now});
      if (t == truth.end()) continue;
      const double e = (b.mean - t->second).squaredNorm() / d;
      step_sum += e;
      ++step_terms;
    }
    rep.step_mse.push_back(step_terms == 0 ? 0.0 : step_sum / static_cast<double>(step_terms));
    total += step_sum;
    terms += step_terms;
  }
  rep.mean_mse = terms == 0 ? 0.0 : total / static_cast<double>(terms);
  return rep;
}

inline void write_replay(const std::vector<ReplayReport>& reps, std::ostream& os) {
  os << "# dcomp-replay 1\n";
  os << "# mean_mse";
  for (const auto& r : reps) os << ' ' << filter::to_string(r.mode) << '=' << fmt_real(r.mean_mse);
  os << "\nstep";
  for (const auto& r : reps) os << ',' << filter::to_string(r.mode);
  os << "\n";
  const std::size_t steps = reps.empty() ? 0 : reps.front().step_mse.size();
  for (std::size_t t = 0; t < steps; ++t) {
    os << t;
    for (const auto& r : reps) os << ',' << fmt_real(r.step_mse[t]);
    os << "\n";
  }
}

}  // namespace dcomp::harness
