// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>

#include "dcomp/gru/dataset.hpp"

namespace dcomp::gru {

inline constexpr double kDefaultScaleFloor = 1e-6;

// Per-feature affine normalization x_n = (x - mean) / scale.
struct Normalizer {
  Vec mean;
  Vec scale;

  static Normalizer identity(int dim) {
    return {Vec::Zero(dim), Vec::Ones(dim)};
  }

  Vec normalize(const Vec& x) const {
    return (x - mean).cwiseQuotient(scale);
  }
  Vec denormalize(const Vec& xn) const {
    return xn.cwiseProduct(scale) + mean;
  }
  // Differences carry no offset, so only the scale applies.
  Vec residual_to_state(const Vec& dn) const { return dn.cwiseProduct(scale); }
  Vec residual_to_normalized(const Vec& d) const {
    return d.cwiseQuotient(scale);
  }
};

/// Population mean and standard deviation over every state in the dataset,
/// with the standard deviation floored at `scale_floor`.
inline Normalizer fit_normalizer(const TrajectoryDataset& ds,
                                 double scale_floor = kDefaultScaleFloor) {
  if (!(scale_floor > 0.0)) throw UsageError("fit_normalizer: scale_floor must be > 0");
  const std::size_t n = ds.sample_count();
  if (n == 0) throw UsageError("fit_normalizer: dataset is empty");

  Vec mean = Vec::Zero(ds.dim);
  for (const auto& ep : ds.episodes)
    for (const auto& s : ep.samples) mean += s.state;
  mean /= static_cast<double>(n);

  Vec var = Vec::Zero(ds.dim);
  for (const auto& ep : ds.episodes)
    for (const auto& s : ep.samples) var += (s.state - mean).cwiseAbs2();
  var /= static_cast<double>(n);

  Vec scale = var.cwiseSqrt();
  for (Eigen::Index k = 0; k < scale.size(); ++k) {
    scale[k] = std::max(scale[k], scale_floor);
  }
  return {std::move(mean), std::move(scale)};
}

}  // namespace dcomp::gru
