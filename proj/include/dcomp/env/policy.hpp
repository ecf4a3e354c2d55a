// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dcomp/env/env.hpp"
#include "dcomp/gru/dataset.hpp"
#include "dcomp/seeding.hpp"

namespace dcomp::env {

struct PolicyGains {
  double kp = 1.0;  // position gain (rendezvous, spread)
  double kd = 2.0;  // velocity gain (rendezvous, spread)
  double repulse = 2.0;      // spread: push-apart gain
  double safe_dist = 0.6;    // spread: repulsion radius
  double orbit_radius = 2.0; // pursuit evader
  double orbit_speed = 1.0;
  double orbit_radial = 1.0; // heading correction per unit radial error
  double heading = 3.0;      // turn-rate gain on heading error
  double speed = 2.0;        // acceleration gain on speed error
  double gap_speed = 1.0;    // pursuer extra speed per unit gap
  double max_lead = 1.5;     // pursuer intercept look-ahead, seconds
};

/// Neighbors of agent i in feature order: every other agent, ascending id.
inline std::vector<int> neighbor_order(int i, int n) {
  std::vector<int> out;
  for (int j = 0; j < n; ++j)
    if (j != i) out.push_back(j);
  return out;
}

/**
 * Deterministic feedback controllers standing in for trained policies.
 *
 * Feature layout for agent i (see filter::build_belief): its own state, then
 * the believed state of every other agent in ascending id, kStateDim each.
 * Peers are seen only through the feature, never through the true world.
 *
 *  - Rendezvous: a = kp (centroid - p) + kd (mean velocity - v).
 *  - Spread: a = kp (landmark_i - p) - kd v + repulsion from close neighbors.
 *  - Pursuit: agent 0 orbits the origin; the others steer at the evader's
 *    intercept point and match its speed as the gap closes.
 */
class ScriptedPolicy {
 public:
  ScriptedPolicy(const EnvSpec& spec, std::vector<Vec> landmarks = {}, PolicyGains gains = {})
      : spec_(spec), landmarks_(std::move(landmarks)), g_(gains) {
    if (spec_.kind == EnvKind::SpreadLite) {
      detail::require(landmarks_.size() == static_cast<std::size_t>(spec_.n_agents),
                      "ScriptedPolicy: SpreadLite needs one landmark per agent");
    }
  }

  Eigen::Index feature_dim() const { return static_cast<Eigen::Index>(spec_.n_agents) * kStateDim; }

  Vec act(int i, const Vec& feature) const {
    if (feature.size() != feature_dim()) {
      throw ContractViolation("policy: feature has length " + std::to_string(feature.size()) +
                              ", expected " + std::to_string(feature_dim()));
    }
    const int n = spec_.n_agents;
    const Vec own = feature.head(kStateDim);
    auto peer = [&](int k) { return feature.segment(kStateDim * (1 + k), kStateDim); };
    const Eigen::Vector2d p = own.head<2>(), v = own.tail<2>();
    Eigen::Vector2d a = Eigen::Vector2d::Zero();

    switch (spec_.kind) {
      case EnvKind::DoubleIntegratorRendezvous: {
        Eigen::Vector2d c = p, vbar = v;
        for (int k = 0; k < n - 1; ++k) {
          c += peer(k).head<2>();
          vbar += peer(k).tail<2>();
        }
        c /= n;
        vbar /= n;
        a = g_.kp * (c - p) + g_.kd * (vbar - v);
        return clip_box(a);
      }
      case EnvKind::SpreadLite: {
        a = g_.kp * (landmarks_[static_cast<std::size_t>(i)] - p) - g_.kd * v;
        for (int k = 0; k < n - 1; ++k) {
          const Eigen::Vector2d d = p - peer(k).head<2>();
          const double dist = d.norm();
          if (dist < g_.safe_dist && dist > 1e-9) a += g_.repulse * (g_.safe_dist - dist) * d / dist;
        }
        return clip_box(a);
      }
      case EnvKind::UnicyclePursuit: {
        const double theta = std::atan2(v[1], v[0]);
        const double speed = v.norm();
        double want_heading, want_speed;
        if (i == 0) {
          const double r = p.norm();
          const double cross = p[0] * v[1] - p[1] * v[0];
          const double dir = cross < 0.0 ? -1.0 : 1.0;
          const double corr = std::clamp(g_.orbit_radial * (r - g_.orbit_radius), -M_PI / 3, M_PI / 3);
          want_heading = std::atan2(p[1], p[0]) + dir * (M_PI / 2 + corr);
          want_speed = g_.orbit_speed;
        } else {
          const Vec ev = peer(0);  // the evader is the first neighbor of every pursuer
          const Eigen::Vector2d ep = ev.head<2>(), evel = ev.tail<2>();
          const double gap = (ep - p).norm();
          const double lead = std::min(g_.max_lead, gap / spec_.max_speed);
          const Eigen::Vector2d aim = ep + evel * lead - p;
          want_heading = aim.norm() > 1e-9 ? std::atan2(aim[1], aim[0]) : std::atan2(evel[1], evel[0]);
          want_speed = evel.norm() + g_.gap_speed * gap;
        }
        want_speed = std::clamp(want_speed, spec_.min_speed, spec_.max_speed);
        Vec out(kActionDim);
        out[0] = std::clamp(g_.heading * wrap_angle(want_heading - theta), -spec_.max_turn_rate,
                            spec_.max_turn_rate);
        out[1] = std::clamp(g_.speed * (want_speed - speed), -spec_.max_accel, spec_.max_accel);
        return out;
      }
    }
    return Vec::Zero(kActionDim);
  }

  /// Feature for agent i built from the true world state (delay-free input).
  static Vec true_feature(const WorldState& w, int i) {
    const int n = static_cast<int>(w.agents.size());
    Vec f(static_cast<Eigen::Index>(n) * kStateDim);
    f.head(kStateDim) = w.agents[static_cast<std::size_t>(i)];
    Eigen::Index off = kStateDim;
    for (int j : neighbor_order(i, n)) {
      f.segment(off, kStateDim) = w.agents[static_cast<std::size_t>(j)];
      off += kStateDim;
    }
    return f;
  }

  const EnvSpec& spec() const { return spec_; }

 private:
  Vec clip_box(const Eigen::Vector2d& a) const {
    Vec out(kActionDim);
    out[0] = std::clamp(a[0], -spec_.max_accel, spec_.max_accel);
    out[1] = std::clamp(a[1], -spec_.max_accel, spec_.max_accel);
    return out;
  }

  EnvSpec spec_;
  std::vector<Vec> landmarks_;
  PolicyGains g_;
};

/// Spec of the i-th episode of a run: same parameters, derived seed.
inline EnvSpec episode_spec(EnvSpec spec, std::uint64_t episode) {
  spec.seed = derive_seed(spec.seed, {episode});
  return spec;
}

/**
 * Delay-free, noise-free rollouts of the scripted policy. Each agent of each
 * episode contributes one sequence of exactly episode_len states (the state
 * before every control step), tagged as converged-policy data.
 */
inline gru::TrajectoryDataset collect_trajectories(const EnvSpec& spec, int n_episodes,
                                                   const PolicyGains& gains = {}) {
  detail::require(n_episodes >= 0, "collect_trajectories: negative episode count");
  gru::TrajectoryDataset ds;
  ds.dim = kStateDim;
  ds.dt = spec.dt;
  for (int e = 0; e < n_episodes; ++e) {
    EnvSpec es = episode_spec(spec, static_cast<std::uint64_t>(e));
    es.obs_noise_frac = 0.0;
    Env env(es);
    WorldState w = env.reset();
    const ScriptedPolicy policy(es, w.landmarks, gains);
    const auto n = static_cast<std::size_t>(es.n_agents);
    std::vector<gru::Episode> eps(n);
    for (auto& ep : eps) ep.tag = gru::kConvergedTag;
    JointAction act(n);
    for (int t = 0; t < es.episode_len; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        eps[i].samples.push_back({w.agents[i], t + 1 == es.episode_len});
        act[i] = policy.act(static_cast<int>(i), ScriptedPolicy::true_feature(w, static_cast<int>(i)));
      }
      if (t + 1 < es.episode_len) w = env.advance(w, act);
    }
    for (auto& ep : eps) ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace dcomp::env
