// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "dcomp/channel/channel.hpp"
#include "dcomp/env/policy.hpp"
#include "dcomp/filter/estimator.hpp"
#include "dcomp/gru/model.hpp"

namespace dcomp::harness {

using env::Vec;

/// Everything needed to run one closed-loop episode.
struct EpisodeSetup {
  env::EnvSpec env;                    // seed already specific to the episode
  channel::ChannelConfig channel;      // seed already specific to the episode
  filter::EstimatorMode mode = filter::EstimatorMode::GruKalman;
  const gru::TransitionModel* model = nullptr;  // required by the GRU modes
  filter::FilterConfig filter;         // Q, rho, P0 (layout and dt are filled in)
  int warmup = 0;                      // steps delivered without delay or loss
  bool timing = false;                 // measure estimator wall time
  bool record_trace = false;
  env::PolicyGains gains;
};

struct EpisodeOutcome {
  double ret = 0.0;                 // sum of team rewards
  double estimate_mse = 0.0;        // mean over steps, agent/neighbor pairs, components
  double mean_rollout_depth = 0.0;  // over all estimator calls
  double step_us = 0.0;             // mean process_step wall time (timing only)
  std::uint64_t packets_processed = 0;
  std::uint64_t dropped_stale = 0;
  channel::ChannelStats channel;
  std::vector<channel::TraceRecord> trace;
  std::vector<std::vector<Vec>> states;  // true states per step (for equivalence checks)
};

/**
 * Runs one episode. At every step each agent broadcasts its payload to every
 * other agent, collects what has arrived, updates one estimator per neighbor,
 * builds its belief feature and acts; then the world advances.
 */
inline EpisodeOutcome run_episode(const EpisodeSetup& setup, bool keep_states = false) {
  using Clock = std::chrono::steady_clock;
  env::Env env(setup.env);
  env::WorldState w = env.reset();
  const env::ScriptedPolicy policy(setup.env, w.landmarks, setup.gains);
  const int n = setup.env.n_agents;
  const auto un = static_cast<std::size_t>(n);

  filter::FilterConfig fcfg = setup.filter;
  fcfg.layout = env::Env::layout();
  fcfg.dt = setup.env.dt;
  if (filter::uses_gru(setup.mode)) {
    if (setup.model == nullptr) throw ConfigError("mode " + std::string(to_string(setup.mode)) +
                                                  " needs a transition model");
    if (setup.model->state_dim() != env::kStateDim) {
      throw ConfigError("transition model state dimension " +
                        std::to_string(setup.model->state_dim()) + " does not match the env (" +
                        std::to_string(env::kStateDim) + ")");
    }
  }
  const int hidden = setup.model != nullptr ? setup.model->hidden_dim() : 1;

  // est[i][k]: agent i's estimator of its k-th neighbor; initial belief is the
  // neighbor's known spawn state.
  std::vector<std::vector<filter::AnyEstimator>> est(un);
  std::vector<std::vector<int>> nbrs(un);
  for (int i = 0; i < n; ++i) {
    nbrs[i] = env::neighbor_order(i, n);
    for (int j : nbrs[i]) {
      est[i].push_back(filter::AnyEstimator::make(
          setup.mode, setup.model, fcfg,
          filter::initial_belief(w.agents[static_cast<std::size_t>(j)], fcfg, hidden, 0)));
    }
  }

  channel::DelayChannel ch(setup.channel);
  ch.set_tracing(setup.record_trace);

  EpisodeOutcome out;
  env::Observation obs = env.observe(w);
  double err_sum = 0.0;
  std::uint64_t err_terms = 0;
  double time_us = 0.0;
  std::uint64_t timed_calls = 0;
  std::vector<filter::Belief> beliefs;
  env::JointAction action(un);

  for (int t = 0; t < setup.env.episode_len; ++t) {
    if (keep_states) out.states.push_back(w.agents);
    // Warmup packets bypass the channel entirely.
    std::vector<std::vector<Packet>> direct(un);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        if (i == j) continue;
        Packet p;
        p.sender = j;
        p.receiver = i;
        p.payload = obs.comms[static_cast<std::size_t>(j)];
        p.send_stamp = t;
        if (t < setup.warmup) direct[static_cast<std::size_t>(i)].push_back(std::move(p));
        else ch.send(p, &w.agents[static_cast<std::size_t>(j)]);
      }
    }
    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      std::vector<Packet> arrived = ch.deliver(i, t);
      for (auto& p : direct[ui]) arrived.push_back(std::move(p));
      beliefs.clear();
      for (std::size_t k = 0; k < nbrs[ui].size(); ++k) {
        const int j = nbrs[ui][k];
        std::vector<Packet> mine;
        for (const auto& p : arrived)
          if (p.sender == j) mine.push_back(p);
        std::sort(mine.begin(), mine.end(),
                  [](const Packet& a, const Packet& b) { return a.send_stamp < b.send_stamp; });
        const auto t0 = setup.timing ? Clock::now() : Clock::time_point{};
        const filter::Belief& b = est[ui][k].process_step(mine, t);
        if (setup.timing) {
          time_us += std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
          ++timed_calls;
        }
        beliefs.push_back(b);
        err_sum += (b.mean - w.agents[static_cast<std::size_t>(j)]).squaredNorm() / env::kStateDim;
        ++err_terms;
      }
      const Vec feature = filter::build_belief(obs.local_obs[ui], beliefs, policy.feature_dim());
      action[ui] = policy.act(i, feature);
    }
    const env::StepResult r = env.step(w, action);
    out.ret += r.reward;
    w = r.next_state;
    obs = r.obs;
  }

  out.estimate_mse = err_terms == 0 ? 0.0 : err_sum / static_cast<double>(err_terms);
  double depth_sum = 0.0, calls = 0.0;
  for (const auto& row : est) {
    for (const auto& e : row) {
      const auto& st = e.stats();
      depth_sum += st.mean_rollout_depth() * static_cast<double>(st.calls);
      calls += static_cast<double>(st.calls);
      out.packets_processed += st.packets_processed;
      out.dropped_stale += st.dropped_stale;
    }
  }
  out.mean_rollout_depth = calls == 0.0 ? 0.0 : depth_sum / calls;
  out.step_us = timed_calls == 0 ? 0.0 : time_us / static_cast<double>(timed_calls);
  out.channel = ch.stats();
  if (setup.record_trace) out.trace = ch.trace();
  return out;
}

}  // namespace dcomp::harness
