// SPDX-License-Identifier: Apache-2.0
// Central finite-difference check of the GRU training gradient.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dcomp/gru/train.hpp"

namespace dcomp::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  long long parameters = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
// whose true gradient is ~0 from dividing roundoff by roundoff.
inline double rel_error(double a, double n, double floor = 1e-7) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Random model with input_dim <= 3, hidden_dim <= 4 and a short random
// dataset; compares every analytic partial against (L(p+h) - L(p-h)) / 2h.
inline GradCheckResult gradient_check_random_model(std::uint64_t seed,
                                                   double step = 1e-5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim_d(1, 3), dim_h(1, 4), len(3, 7);
  std::normal_distribution<double> g(0.0, 1.0);
  const int d = dim_d(rng), h = dim_h(rng);

  gru::GruParams p = gru::GruParams::random_uniform(d, h, seed * 7919 + 1);
  // Spread the weights a little wider than the default init so that the
  // gates are away from their linear regime.
  p.for_each([&](auto& t) { t *= 2.0; });

  std::vector<gru::PreparedEpisode> eps(2);
  for (auto& ep : eps) {
    const int n = len(rng);
    for (int t = 0; t < n; ++t) {
      Vec x(d), y(d);
      for (int k = 0; k < d; ++k) {
        x[k] = g(rng);
        y[k] = 0.5 * g(rng);
      }
      ep.inputs.push_back(x);
      ep.targets.push_back(y);
    }
  }
  const int trunc = 16;  // longer than any episode: exact gradient
  const auto analytic = gru::loss_and_gradient(p, eps, trunc);

  std::vector<double> grad_flat;
  analytic.grad.for_each([&](const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) grad_flat.push_back(t.data()[i]);
  });

  auto loss_at = [&](const gru::GruParams& q) {
    double sum = 0.0;
    std::size_t terms = 0;
    for (const auto& ep : eps) {
      sum += gru::episode_squared_error(q, ep);
      terms += ep.size() * static_cast<std::size_t>(d);
    }
    return sum / static_cast<double>(terms);
  };

  GradCheckResult res;
  std::size_t flat = 0;
  std::size_t tensor_index = 0;
  p.for_each([&](const auto& tensor) {
    for (Eigen::Index i = 0; i < tensor.size(); ++i, ++flat) {
      gru::GruParams plus = p, minus = p;
      std::size_t ti = 0;
      plus.for_each([&](auto& t) {
        if (ti++ == tensor_index) t.data()[i] += step;
      });
      ti = 0;
      minus.for_each([&](auto& t) {
        if (ti++ == tensor_index) t.data()[i] -= step;
      });
      const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * step);
      res.max_rel_error =
          std::max(res.max_rel_error, rel_error(grad_flat[flat], numeric));
      ++res.parameters;
    }
    ++tensor_index;
  });
  return res;
}

}  // namespace dcomp::testing
