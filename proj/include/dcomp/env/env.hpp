// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dcomp/errors.hpp"
#include "dcomp/filter/kalman.hpp"

namespace dcomp::env {

using Vec = Eigen::VectorXd;
using JointAction = std::vector<Vec>;

enum class EnvKind { DoubleIntegratorRendezvous, UnicyclePursuit, SpreadLite };

inline std::string_view to_string(EnvKind k) {
  switch (k) {
    case EnvKind::DoubleIntegratorRendezvous: return "DoubleIntegratorRendezvous";
    case EnvKind::UnicyclePursuit: return "UnicyclePursuit";
    case EnvKind::SpreadLite: return "SpreadLite";
  }
  return "?";
}

inline std::optional<EnvKind> parse_env_kind(std::string_view s) {
  for (auto k : {EnvKind::DoubleIntegratorRendezvous, EnvKind::UnicyclePursuit,
                 EnvKind::SpreadLite}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

// Every environment uses the per-agent state (px, py, vx, vy).
inline constexpr int kStateDim = 4;
inline constexpr int kActionDim = 2;

/**
 * Environment parameters. Unicycle agents carry their heading and speed in
 * the velocity vector: theta = atan2(vy, vx), v = |(vx, vy)|, with v kept in
 * [min_speed, max_speed] so that the heading is always defined.
 */
struct EnvSpec {
  EnvKind kind = EnvKind::DoubleIntegratorRendezvous;
  int n_agents = 3;
  double dt = 0.1;
  int episode_len = 200;
  double obs_noise_frac = 0.0;
  std::uint64_t seed = 0;

  double arena = 6.0;          // positions are clipped to [-arena, arena]^2
  double spawn_radius = 2.0;   // spawn box half-width (ring radius for pursuit pursuers)
  double min_separation = 0.5;
  double max_accel = 2.0;      // |a| per component (double integrator) or |dv/dt| (unicycle)
  double max_turn_rate = 2.0;  // |omega|, unicycle
  double min_speed = 0.1;      // unicycle
  double max_speed = 1.5;      // unicycle

  void validate() const {
    if (n_agents < 2) throw ConfigError("env: n_agents must be >= 2");
    if (!(dt > 0.0)) throw ConfigError("env: dt must be > 0");
    if (episode_len < 1) throw ConfigError("env: episode_len must be >= 1");
    if (!(obs_noise_frac >= 0.0)) throw ConfigError("env: obs_noise_frac must be >= 0");
    if (!(arena > 0.0) || !(spawn_radius > 0.0) || spawn_radius >= arena)
      throw ConfigError("env: need 0 < spawn_radius < arena");
    if (!(min_separation >= 0.0)) throw ConfigError("env: min_separation must be >= 0");
    if (!(max_accel > 0.0) || !(max_turn_rate > 0.0))
      throw ConfigError("env: action bounds must be > 0");
    if (!(min_speed > 0.0) || !(max_speed > min_speed))
      throw ConfigError("env: need 0 < min_speed < max_speed");
  }
};

struct WorldState {
  std::vector<Vec> agents;     // kStateDim each
  std::vector<Vec> landmarks;  // SpreadLite only, one per agent
  std::int64_t t = 0;
};

struct Observation {
  std::vector<Vec> local_obs;  // exact own state
  std::vector<Vec> comms;      // state broadcast to peers, noisy if obs_noise_frac > 0
};

struct StepResult {
  WorldState next_state;
  Observation obs;
  double reward = 0.0;
  bool done = false;
};

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

class Env {
 public:
  explicit Env(EnvSpec spec) : spec_(spec), rng_(spec.seed) { spec_.validate(); }

  const EnvSpec& spec() const { return spec_; }
  int state_dim() const { return kStateDim; }

  /// Position/velocity index pairs of the state, for kinematic filters.
  static filter::KinematicLayout layout() { return {{{0, 2}, {1, 3}}}; }

  /// Typical spread of each state feature, the scale for observation noise.
  Vec nominal_std() const {
    Vec s(kStateDim);
    if (spec_.kind == EnvKind::UnicyclePursuit) s << 2.0, 2.0, 0.8, 0.8;
    else s << 1.0, 1.0, 0.5, 0.5;
    return s;
  }

  /// Deterministic in spec.seed; also restarts the observation-noise stream.
  WorldState reset() {
    rng_.seed(spec_.seed);
    noise_.reset();
    clipped_actions_ = 0;
    clipped_positions_ = 0;
    WorldState w;
    const auto n = static_cast<std::size_t>(spec_.n_agents);
    w.agents.resize(n);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> angle(-M_PI, M_PI);
    if (spec_.kind == EnvKind::UnicyclePursuit) {
      // Evader near its orbit, pursuers on an outer ring; all start moving.
      std::uniform_real_distribution<double> speed(0.5, 1.0);
      const std::vector<Vec> pos = spawn_positions(n, [&](std::size_t i) {
        const double r = i == 0 ? 1.5 + 0.5 * (u(rng_) + 1.0)
                                : spec_.spawn_radius + 0.5 * (u(rng_) + 1.0);
        const double a = angle(rng_);
        return Eigen::Vector2d(r * std::cos(a), r * std::sin(a));
      });
      for (std::size_t i = 0; i < n; ++i) {
        const double th = angle(rng_), v = speed(rng_);
        w.agents[i] = Vec(kStateDim);
        w.agents[i] << pos[i][0], pos[i][1], v * std::cos(th), v * std::sin(th);
      }
    } else {
      const std::vector<Vec> pos = spawn_positions(n, [&](std::size_t) {
        return Eigen::Vector2d(spec_.spawn_radius * u(rng_), spec_.spawn_radius * u(rng_));
      });
      Eigen::Vector2d mean_v = Eigen::Vector2d::Zero();
      std::vector<Eigen::Vector2d> vel(n);
      for (std::size_t i = 0; i < n; ++i) {
        vel[i] = Eigen::Vector2d(0.5 * u(rng_), 0.5 * u(rng_));
        mean_v += vel[i] / static_cast<double>(n);
      }
      for (std::size_t i = 0; i < n; ++i) {
        // Zero-mean velocities keep the team centroid at rest.
        const Eigen::Vector2d v =
            spec_.kind == EnvKind::DoubleIntegratorRendezvous ? Eigen::Vector2d(vel[i] - mean_v)
                                                              : Eigen::Vector2d::Zero();
        w.agents[i] = Vec(kStateDim);
        w.agents[i] << pos[i][0], pos[i][1], v[0], v[1];
      }
      if (spec_.kind == EnvKind::SpreadLite) {
        w.landmarks = spawn_positions(n, [&](std::size_t) {
          return Eigen::Vector2d(spec_.spawn_radius * u(rng_), spec_.spawn_radius * u(rng_));
        });
      }
    }
    return w;
  }

  /// Closed-form dynamics; a pure function of (state, action) apart from the
  /// clip counters.
  WorldState advance(const WorldState& w, const JointAction& action) {
    detail::require(action.size() == w.agents.size(), "env_step: one action per agent required");
    WorldState next = w;
    next.t = w.t + 1;
    const double dt = spec_.dt;
    for (std::size_t i = 0; i < w.agents.size(); ++i) {
      const Vec& a_raw = action[i];
      detail::require(a_raw.size() == kActionDim, "env_step: action must have 2 components");
      if (!a_raw.allFinite()) {
        throw ContractViolation("env_step: non-finite action for agent " + std::to_string(i));
      }
      const Vec& s = w.agents[i];
      Vec& out = next.agents[i];
      if (spec_.kind == EnvKind::UnicyclePursuit) {
        const double omega = clip(a_raw[0], spec_.max_turn_rate);
        const double acc = clip(a_raw[1], spec_.max_accel);
        const double th = std::atan2(s[3], s[2]) + omega * dt;
        const double v = std::clamp(std::hypot(s[2], s[3]) + acc * dt, spec_.min_speed,
                                    spec_.max_speed);
        out[0] = s[0] + s[2] * dt;
        out[1] = s[1] + s[3] * dt;
        out[2] = v * std::cos(th);
        out[3] = v * std::sin(th);
      } else {
        const double ax = clip(a_raw[0], spec_.max_accel);
        const double ay = clip(a_raw[1], spec_.max_accel);
        out[0] = s[0] + s[2] * dt;
        out[1] = s[1] + s[3] * dt;
        out[2] = s[2] + ax * dt;
        out[3] = s[3] + ay * dt;
      }
      for (int k = 0; k < 2; ++k) {
        if (std::abs(out[k]) > spec_.arena) {
          out[k] = std::clamp(out[k], -spec_.arena, spec_.arena);
          ++clipped_positions_;
        }
      }
    }
    return next;
  }

  /// Team reward: minus the mean distance to goal (0 exactly at the goal).
  double reward(const WorldState& w) const {
    const auto n = w.agents.size();
    double sum = 0.0;
    switch (spec_.kind) {
      case EnvKind::DoubleIntegratorRendezvous: {
        Eigen::Vector2d c = Eigen::Vector2d::Zero();
        for (const auto& s : w.agents) c += s.head<2>() / static_cast<double>(n);
        for (const auto& s : w.agents) sum += (s.head<2>() - c).norm();
        return -sum / static_cast<double>(n);
      }
      case EnvKind::UnicyclePursuit: {
        for (std::size_t i = 1; i < n; ++i) sum += (w.agents[i].head<2>() - w.agents[0].head<2>()).norm();
        return -sum / static_cast<double>(n - 1);
      }
      case EnvKind::SpreadLite: {
        for (std::size_t i = 0; i < n; ++i) sum += (w.agents[i].head<2>() - w.landmarks[i]).norm();
        return -sum / static_cast<double>(n);
      }
    }
    return 0.0;
  }

  /// Local observations and broadcast payloads for `w`. Draws the same number
  /// of noise samples whatever the noise level, so streams stay aligned.
  Observation observe(const WorldState& w) {
    Observation o;
    o.local_obs = w.agents;
    o.comms.reserve(w.agents.size());
    const Vec scale = spec_.obs_noise_frac * nominal_std();
    for (const auto& s : w.agents) {
      Vec c = s;
      for (int k = 0; k < kStateDim; ++k) {
        const double e = noise_(rng_);
        if (spec_.obs_noise_frac > 0.0) c[k] += scale[k] * e;
      }
      o.comms.push_back(std::move(c));
    }
    return o;
  }

  StepResult step(const WorldState& w, const JointAction& action) {
    StepResult r;
    r.next_state = advance(w, action);
    r.obs = observe(r.next_state);
    r.reward = reward(r.next_state);
    r.done = r.next_state.t >= spec_.episode_len;
    return r;
  }

  std::uint64_t clipped_actions() const { return clipped_actions_; }
  std::uint64_t clipped_positions() const { return clipped_positions_; }

 private:
  double clip(double a, double bound) {
    if (std::abs(a) > bound) {
      ++clipped_actions_;
      return std::clamp(a, -bound, bound);
    }
    return a;
  }

  // Rejection-samples positions until every pair is min_separation apart.
  template <class Draw>
  std::vector<Vec> spawn_positions(std::size_t n, Draw draw) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::vector<Vec> pos;
      for (std::size_t i = 0; i < n; ++i) pos.push_back(Vec(draw(i)));
      bool ok = true;
      for (std::size_t i = 0; i < n && ok; ++i)
        for (std::size_t j = i + 1; j < n && ok; ++j)
          ok = (pos[i] - pos[j]).norm() >= spec_.min_separation;
      if (ok) return pos;
    }
    throw ConfigError("env: cannot place agents with the requested min_separation");
  }

  EnvSpec spec_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> noise_{0.0, 1.0};
  std::uint64_t clipped_actions_ = 0;
  std::uint64_t clipped_positions_ = 0;
};

}  // namespace dcomp::env
