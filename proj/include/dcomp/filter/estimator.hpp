// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dcomp/filter/kalman.hpp"
#include "dcomp/packet.hpp"

namespace dcomp::filter {

enum class EstimatorMode { GruKalman, NaiveKalman, GruOnly, NoCompensation };

inline std::string_view to_string(EstimatorMode m) {
  switch (m) {
    case EstimatorMode::GruKalman: return "GruKalman";
    case EstimatorMode::NaiveKalman: return "NaiveKalman";
    case EstimatorMode::GruOnly: return "GruOnly";
    case EstimatorMode::NoCompensation: return "NoCompensation";
  }
  return "?";
}

inline std::optional<EstimatorMode> parse_mode(std::string_view s) {
  for (auto m : {EstimatorMode::GruKalman, EstimatorMode::NaiveKalman,
                 EstimatorMode::GruOnly, EstimatorMode::NoCompensation}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

inline bool uses_gru(EstimatorMode m) {
  return m == EstimatorMode::GruKalman || m == EstimatorMode::GruOnly;
}

// How a received payload enters the belief.
enum class Assimilation {
  Kalman,   // kf_update with R = rho * Q
  Replace,  // overwrite the observed components (open-loop model baseline)
};

struct EstimatorStats {
  std::uint64_t calls = 0;
  std::uint64_t packets_processed = 0;
  std::uint64_t dropped_stale = 0;
  // rollout_depth_hist[k] = number of calls that ended k steps past the
  // checkpoint.
  std::vector<std::uint64_t> rollout_depth_hist;

  void record_depth(std::int64_t depth) {
    const auto k = static_cast<std::size_t>(depth);
    if (rollout_depth_hist.size() <= k) rollout_depth_hist.resize(k + 1, 0);
    ++rollout_depth_hist[k];
  }
  double mean_rollout_depth() const {
    double sum = 0.0, n = 0.0;
    for (std::size_t k = 0; k < rollout_depth_hist.size(); ++k) {
      sum += static_cast<double>(k * rollout_depth_hist[k]);
      n += static_cast<double>(rollout_depth_hist[k]);
    }
    return n == 0.0 ? 0.0 : sum / n;
  }
};

/**
 * Delay-aware belief over one neighbor.
 *
 * On every call the estimator restores the checkpoint, runs predict/update
 * through each newly arrived packet in send order, saves the result as the
 * new checkpoint and predicts forward to `now`. Without new packets it keeps
 * predicting from where it is, which is the same computation as a rollout
 * from the checkpoint. `current()` is therefore always the checkpoint
 * advanced by (now - checkpoint.stamp) predict steps.
 */
template <class Dynamics>
class NeighborEstimator {
 public:
  NeighborEstimator(Dynamics dyn, FilterConfig cfg, Belief initial,
                    Assimilation assimilation = Assimilation::Kalman)
      : dyn_(std::move(dyn)),
        cfg_(std::move(cfg)),
        assimilation_(assimilation),
        checkpoint_(initial),
        current_(std::move(initial)),
        last_packet_stamp_(checkpoint_.stamp - 1) {
    cfg_.validate();
    detail::require(current_.mean.size() == cfg_.dim() &&
                        current_.cov.rows() == cfg_.dim() &&
                        current_.cov.cols() == cfg_.dim(),
                    "NeighborEstimator: initial belief does not match config");
  }

  const Belief& process_step(std::span<const Packet> packets, std::int64_t now) {
    if (now < current_.stamp) {
      throw ContractViolation("process_step: time went backwards (now=" + std::to_string(now) +
                              ", estimate at " + std::to_string(current_.stamp) + ")");
    }
    ++stats_.calls;
    bool assimilated = false;
    Belief b;
    for (const Packet& p : packets) {
      if (p.send_stamp > now) {
        throw ContractViolation("process_step: packet stamped " + std::to_string(p.send_stamp) +
                                " is from the future (now=" + std::to_string(now) + ")");
      }
      if (p.send_stamp <= last_packet_stamp_) {
        ++stats_.dropped_stale;
        continue;
      }
      if (!assimilated) {
        b = checkpoint_;
        assimilated = true;
      }
      while (b.stamp < p.send_stamp) b = kf_predict(std::move(b), dyn_, cfg_.process_var);
      b = assimilate(std::move(b), p.payload);
      last_packet_stamp_ = p.send_stamp;
      ++stats_.packets_processed;
    }
    if (assimilated) {
      checkpoint_ = b;
      current_ = std::move(b);
    }
    while (current_.stamp < now) {
      current_ = kf_predict(std::move(current_), dyn_, cfg_.process_var);
    }
    stats_.record_depth(current_.stamp - checkpoint_.stamp);
    return current_;
  }

  const Belief& current() const { return current_; }
  const Checkpoint& checkpoint() const { return checkpoint_; }
  std::int64_t last_packet_stamp() const { return last_packet_stamp_; }
  const EstimatorStats& stats() const { return stats_; }
  const FilterConfig& config() const { return cfg_; }
  const Dynamics& dynamics() const { return dyn_; }

 private:
  Belief assimilate(Belief b, const Vec& payload) const {
    if (assimilation_ == Assimilation::Kalman) return kf_update(std::move(b), payload, cfg_);
    const auto idx = cfg_.observed_indices();
    detail::require(payload.size() == static_cast<Eigen::Index>(idx.size()),
                    "process_step: payload has wrong length");
    for (std::size_t i = 0; i < idx.size(); ++i)
      b.mean[idx[i]] = payload[static_cast<Eigen::Index>(i)];
    return b;
  }

  Dynamics dyn_;
  FilterConfig cfg_;
  Assimilation assimilation_;
  Checkpoint checkpoint_;
  Belief current_;
  std::int64_t last_packet_stamp_;
  EstimatorStats stats_;
};

/// Delay-unaware baseline: the estimate is the last raw payload received.
class ZeroOrderHold {
 public:
  explicit ZeroOrderHold(Belief initial)
      : current_(std::move(initial)), last_packet_stamp_(current_.stamp - 1) {}

  const Belief& process_step(std::span<const Packet> packets, std::int64_t now) {
    if (now < current_.stamp) throw ContractViolation("process_step: time went backwards");
    ++stats_.calls;
    for (const Packet& p : packets) {
      if (p.send_stamp > now) throw ContractViolation("process_step: packet from the future");
      if (p.send_stamp <= last_packet_stamp_) {
        ++stats_.dropped_stale;
        continue;
      }
      detail::require(p.payload.size() == current_.mean.size(),
                      "process_step: payload has wrong length");
      current_.mean = p.payload;
      last_packet_stamp_ = p.send_stamp;
      ++stats_.packets_processed;
    }
    current_.stamp = now;
    stats_.record_depth(now - std::max<std::int64_t>(last_packet_stamp_, 0));
    return current_;
  }

  const Belief& current() const { return current_; }
  std::int64_t last_packet_stamp() const { return last_packet_stamp_; }
  const EstimatorStats& stats() const { return stats_; }

 private:
  Belief current_;
  std::int64_t last_packet_stamp_;
  EstimatorStats stats_;
};

// Runtime-selected estimator for one neighbor.
class AnyEstimator {
 public:
  using Variant = std::variant<NeighborEstimator<GruDynamics>,
                               NeighborEstimator<KinematicDynamics>, ZeroOrderHold>;

  explicit AnyEstimator(Variant v) : v_(std::move(v)) {}

  /**
   * Builds the estimator for `mode`. `model` is required for the GRU modes;
   * the Kalman modes take Q, R and P0 from `cfg`.
   */
  static AnyEstimator make(EstimatorMode mode, const TransitionModel* model,
                           const FilterConfig& cfg, Belief initial) {
    switch (mode) {
      case EstimatorMode::GruKalman:
      case EstimatorMode::GruOnly:
        if (model == nullptr) throw ConfigError("GRU estimator mode requires a transition model");
        return AnyEstimator(NeighborEstimator<GruDynamics>(
            GruDynamics{model}, cfg, std::move(initial),
            mode == EstimatorMode::GruOnly ? Assimilation::Replace : Assimilation::Kalman));
      case EstimatorMode::NaiveKalman:
        if (cfg.layout.empty()) throw ConfigError("NaiveKalman requires a kinematic layout");
        return AnyEstimator(NeighborEstimator<KinematicDynamics>(
            KinematicDynamics{cfg.layout, cfg.dt, cfg.naive_damping}, cfg, std::move(initial)));
      case EstimatorMode::NoCompensation:
        return AnyEstimator(ZeroOrderHold(std::move(initial)));
    }
    throw ConfigError("unknown estimator mode");
  }

  const Belief& process_step(std::span<const Packet> packets, std::int64_t now) {
    return std::visit([&](auto& e) -> const Belief& { return e.process_step(packets, now); }, v_);
  }
  const Belief& current() const {
    return std::visit([](const auto& e) -> const Belief& { return e.current(); }, v_);
  }
  const EstimatorStats& stats() const {
    return std::visit([](const auto& e) -> const EstimatorStats& { return e.stats(); }, v_);
  }

 private:
  Variant v_;
};

/// Initial belief: known spawn state, P0 from the config, zero hidden.
inline Belief initial_belief(const Vec& spawn_state, const FilterConfig& cfg, int hidden_dim,
                             std::int64_t stamp = 0) {
  Belief b;
  b.mean = spawn_state;
  b.cov = cfg.init_var.asDiagonal();
  b.hidden = Vec::Zero(hidden_dim);
  b.stamp = stamp;
  return b;
}

/**
 * Policy input: the agent's own observation followed by each neighbor's
 * current mean, in the fixed neighbor order. Offsets: local at 0, neighbor k
 * at local.size() + k * d.
 */
inline Vec build_belief(const Vec& local_obs, std::span<const Belief> neighbors,
                        std::optional<Eigen::Index> expected_dim = std::nullopt) {
  Eigen::Index n = local_obs.size();
  for (const auto& b : neighbors) n += b.mean.size();
  if (expected_dim && *expected_dim != n) {
    throw ContractViolation("build_belief: feature has length " + std::to_string(n) +
                            ", policy expects " + std::to_string(*expected_dim));
  }
  Vec out(n);
  out.head(local_obs.size()) = local_obs;
  Eigen::Index off = local_obs.size();
  for (const auto& b : neighbors) {
    out.segment(off, b.mean.size()) = b.mean;
    off += b.mean.size();
  }
  return out;
}

}  // namespace dcomp::filter
