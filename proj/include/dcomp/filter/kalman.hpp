// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "dcomp/gru/model.hpp"

namespace dcomp::filter {

using gru::TransitionModel;

/// Gaussian belief over one neighbor's communicated state.
struct Belief {
  Vec mean;
  Mat cov;
  Vec hidden;  // GRU hidden state paired with `mean`
  std::int64_t stamp = 0;  // control step the estimate refers to
};

// The last verified (post-update, pre-rollout) belief.
using Checkpoint = Belief;

// Position/velocity index pairs for the kinematic baseline; for a state
// (px, py, vx, vy) this is {{0, 2}, {1, 3}}.
struct KinematicLayout {
  std::vector<std::pair<int, int>> pairs;
  bool empty() const { return pairs.empty(); }
};

inline constexpr double kDefaultRho = 0.25;
inline constexpr double kDefaultNaiveDamping = 0.95;
// Lower bound applied to the process variance so that Q stays positive
// definite for components the model predicts exactly.
inline constexpr double kDefaultProcessVarFloor = 1e-10;

struct FilterConfig {
  Vec process_var;            // diag(Q)
  double rho = kDefaultRho;   // R = rho * Q on observed components
  std::vector<int> observed;  // measurement selection H; empty = identity
  Vec init_var;               // diag(P0)
  double naive_damping = kDefaultNaiveDamping;
  double dt = 0.1;
  KinematicLayout layout;

  int dim() const { return static_cast<int>(process_var.size()); }

  std::vector<int> observed_indices() const {
    if (!observed.empty()) return observed;
    std::vector<int> all(static_cast<std::size_t>(dim()));
    for (int k = 0; k < dim(); ++k) all[static_cast<std::size_t>(k)] = k;
    return all;
  }

  Vec meas_var() const {
    const auto idx = observed_indices();
    Vec r(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
      r[static_cast<Eigen::Index>(i)] = rho * process_var[idx[i]];
    return r;
  }

  void validate() const {
    if (dim() <= 0) throw ConfigError("FilterConfig: empty process covariance");
    for (Eigen::Index k = 0; k < process_var.size(); ++k) {
      if (!(process_var[k] > 0.0)) {
        throw ConfigError("FilterConfig: process variance must be positive");
      }
    }
    if (!(rho > 0.0)) throw ConfigError("FilterConfig: rho must be positive");
    if (init_var.size() != process_var.size()) {
      throw ConfigError("FilterConfig: init_var has wrong length");
    }
    std::vector<bool> seen(static_cast<std::size_t>(dim()), false);
    for (int i : observed) {
      if (i < 0 || i >= dim() || seen[static_cast<std::size_t>(i)]) {
        throw ConfigError("FilterConfig: measurement selection must name distinct state components");
      }
      seen[static_cast<std::size_t>(i)] = true;
    }
    if (!(naive_damping > 0.0 && naive_damping <= 1.0)) {
      throw ConfigError("FilterConfig: naive_damping must lie in (0, 1]");
    }
  }

  /// Q = diag(train_mse) (floored), R = rho * Q, P0 = p0_scale * Q.
  static FilterConfig from_training_mse(const Vec& train_mse, double rho = kDefaultRho,
                                        double p0_scale = 1.0,
                                        double var_floor = kDefaultProcessVarFloor) {
    FilterConfig c;
    c.process_var = train_mse.cwiseMax(var_floor);
    c.rho = rho;
    c.init_var = p0_scale * c.process_var;
    return c;
  }
};

inline void symmetrize(Mat& m) { m = 0.5 * (m + m.transpose()).eval(); }

inline double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// Transition models usable inside the predict step. Each provides
//   void advance(Vec& mean, Vec& hidden) const;  // mean (and hidden) one step
//   void transport(Mat& cov) const;              // cov <- F cov F^T

// Learned residual GRU. The Jacobian is taken to be the identity.
struct GruDynamics {
  const TransitionModel* model = nullptr;

  void advance(Vec& mean, Vec& hidden) const {
    gru::Prediction p = gru::predict_next(*model, hidden, mean);
    mean = std::move(p.state);
    hidden = std::move(p.hidden);
  }
  void transport(Mat&) const {}
};

// Damped first-order kinematics: p' = p + v dt, v' = damping * v; other
// components are held.
struct KinematicDynamics {
  KinematicLayout layout;
  double dt = 0.1;
  double damping = kDefaultNaiveDamping;

  void advance(Vec& mean, Vec&) const {
    if (layout.empty()) throw ConfigError("naive predict: state has no kinematic layout");
    for (auto [p, v] : layout.pairs) {
      mean[p] = mean[p] + mean[v] * dt;
      mean[v] = damping * mean[v];
    }
  }
  Mat jacobian(Eigen::Index dim) const {
    Mat f = Mat::Identity(dim, dim);
    for (auto [p, v] : layout.pairs) {
      f(p, v) = dt;
      f(v, v) = damping;
    }
    return f;
  }
  void transport(Mat& cov) const {
    if (layout.empty()) throw ConfigError("naive predict: state has no kinematic layout");
    const Mat f = jacobian(cov.rows());
    cov = f * cov * f.transpose();
  }
};

// x' = x + M x + c with an identity-Jacobian covariance step. Exact only for
// M = 0; serves as a known stand-in for the GRU in oracle tests.
struct LinearResidualDynamics {
  Mat m;
  Vec c;

  void advance(Vec& mean, Vec&) const { mean = mean + m * mean + c; }
  void transport(Mat&) const {}
};

/// Predict one control step: mean through the dynamics, cov <- F P F^T + Q.
template <class Dynamics>
Belief kf_predict(Belief b, const Dynamics& dyn, const Vec& process_var) {
  dyn.advance(b.mean, b.hidden);
  if (!b.mean.allFinite()) {
    throw NumericError("kf_predict: non-finite mean at stamp " + std::to_string(b.stamp));
  }
  dyn.transport(b.cov);
  b.cov.diagonal() += process_var;
  symmetrize(b.cov);
  ++b.stamp;
  return b;
}

inline Belief kf_predict(Belief b, const TransitionModel& model, const Vec& process_var) {
  return kf_predict(std::move(b), GruDynamics{&model}, process_var);
}

inline Belief naive_predict(Belief b, double dt, double damping,
                            const KinematicLayout& layout, const Vec& process_var) {
  return kf_predict(std::move(b), KinematicDynamics{layout, dt, damping}, process_var);
}

/**
 * Kalman measurement update with a selection measurement map.
 *
 * K = P H^T (H P H^T + R)^-1, mean += K (z - H mean) and the Joseph-form
 * covariance (I - K H) P (I - K H)^T + K R K^T. Hidden and stamp are kept.
 */
inline Belief kf_update(Belief b, const Vec& z, const FilterConfig& cfg) {
  const auto idx = cfg.observed_indices();
  const auto m = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index d = b.mean.size();
  detail::require(z.size() == m, "kf_update: measurement has wrong length");
  detail::require(b.cov.rows() == d && b.cov.cols() == d && cfg.dim() == d,
                  "kf_update: belief and config dimensions differ");
  if (!z.allFinite()) throw NumericError("kf_update: non-finite measurement");

  const Vec r = cfg.meas_var();
  Mat pht(d, m);  // P H^T
  for (Eigen::Index j = 0; j < m; ++j) pht.col(j) = b.cov.col(idx[static_cast<std::size_t>(j)]);
  Mat s(m, m);  // H P H^T + R
  Vec innov(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    s.row(i) = pht.row(idx[static_cast<std::size_t>(i)]);
    s(i, i) += r[i];
    innov[i] = z[i] - b.mean[idx[static_cast<std::size_t>(i)]];
  }
  Eigen::LLT<Mat> llt(s);
  if (llt.info() != Eigen::Success) {
    throw NumericError("kf_update: innovation covariance is singular at stamp " +
                       std::to_string(b.stamp));
  }
  // K = P H^T S^-1  <=>  S K^T = H P
  const Mat k = llt.solve(pht.transpose()).transpose();
  b.mean += k * innov;

  Mat ikh = Mat::Identity(d, d);
  for (Eigen::Index j = 0; j < m; ++j) ikh.col(idx[static_cast<std::size_t>(j)]) -= k.col(j);
  b.cov = ikh * b.cov * ikh.transpose() + k * r.asDiagonal() * k.transpose();
  symmetrize(b.cov);
  if (!b.mean.allFinite() || !b.cov.allFinite()) {
    throw NumericError("kf_update: non-finite result at stamp " + std::to_string(b.stamp));
  }
  return b;
}

}  // namespace dcomp::filter
