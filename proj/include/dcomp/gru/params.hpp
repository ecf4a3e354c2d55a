// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "dcomp/errors.hpp"

namespace dcomp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace gru {

// One gate: pre-activation = input * x + recurrent * h + bias.
struct Gate {
  Mat input;      // hidden_dim x input_dim
  Mat recurrent;  // hidden_dim x hidden_dim
  Vec bias;       // hidden_dim
};

/**
 * Weights of a single-layer GRU followed by a linear read-out.
 *
 *   z  = sigmoid(Wz x + Uz h + bz)
 *   r  = sigmoid(Wr x + Ur h + br)
 *   c  = tanh(Wc x + Uc (r .* h) + bc)
 *   h' = (1 - z) .* h + z .* c
 *   y  = Wo h' + bo
 *
 * y is the residual increment in normalized state units.
 */
struct GruParams {
  int input_dim = 0;
  int hidden_dim = 0;
  Gate update;
  Gate reset;
  Gate candidate;
  Mat out_weight;  // input_dim x hidden_dim
  Vec out_bias;    // input_dim

  static GruParams zeros(int input_dim, int hidden_dim) {
    detail::require(input_dim > 0 && hidden_dim > 0,
                    "GruParams: dimensions must be positive");
    GruParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    for (Gate* g : {&p.update, &p.reset, &p.candidate}) {
      g->input = Mat::Zero(hidden_dim, input_dim);
      g->recurrent = Mat::Zero(hidden_dim, hidden_dim);
      g->bias = Vec::Zero(hidden_dim);
    }
    p.out_weight = Mat::Zero(input_dim, hidden_dim);
    p.out_bias = Vec::Zero(input_dim);
    return p;
  }

  // Every entry uniform in [-1/sqrt(hidden_dim), 1/sqrt(hidden_dim)].
  static GruParams random_uniform(int input_dim, int hidden_dim,
                                  std::uint64_t seed) {
    GruParams p = zeros(input_dim, hidden_dim);
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    p.for_each([&](auto& t) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    });
    return p;
  }

  // Visits every tensor in a fixed order (serialization and the optimizer
  // rely on this order).
  template <class F>
  void for_each(F&& f) {
    for (Gate* g : {&update, &reset, &candidate}) {
      f(g->input);
      f(g->recurrent);
      f(g->bias);
    }
    f(out_weight);
    f(out_bias);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const Gate* g : {&update, &reset, &candidate}) {
      f(g->input);
      f(g->recurrent);
      f(g->bias);
    }
    f(out_weight);
    f(out_bias);
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for_each([&](const auto& t) { n += t.size(); });
    return n;
  }

  void validate() const {
    auto shape = [&](const auto& t, Eigen::Index rows, Eigen::Index cols,
                     const char* name) {
      if (t.rows() != rows || t.cols() != cols) {
        throw ContractViolation(std::string("GruParams: bad shape for ") +
                                name);
      }
      if (!t.allFinite()) {
        throw NumericError(std::string("GruParams: non-finite entry in ") +
                           name);
      }
    };
    detail::require(input_dim > 0 && hidden_dim > 0,
                    "GruParams: dimensions must be positive");
    const Eigen::Index d = input_dim, h = hidden_dim;
    shape(update.input, h, d, "update.input");
    shape(update.recurrent, h, h, "update.recurrent");
    shape(update.bias, h, 1, "update.bias");
    shape(reset.input, h, d, "reset.input");
    shape(reset.recurrent, h, h, "reset.recurrent");
    shape(reset.bias, h, 1, "reset.bias");
    shape(candidate.input, h, d, "candidate.input");
    shape(candidate.recurrent, h, h, "candidate.recurrent");
    shape(candidate.bias, h, 1, "candidate.bias");
    shape(out_weight, d, h, "out_weight");
    shape(out_bias, d, 1, "out_bias");
  }
};

// Applies f to corresponding tensors of two parameter sets of equal shape.
template <class F>
void zip_tensors(GruParams& a, const GruParams& b, F&& f) {
  Gate* ga[] = {&a.update, &a.reset, &a.candidate};
  const Gate* gb[] = {&b.update, &b.reset, &b.candidate};
  for (int i = 0; i < 3; ++i) {
    f(ga[i]->input, gb[i]->input);
    f(ga[i]->recurrent, gb[i]->recurrent);
    f(ga[i]->bias, gb[i]->bias);
  }
  f(a.out_weight, b.out_weight);
  f(a.out_bias, b.out_bias);
}

// Intermediate values of one cell step, kept for backpropagation.
struct StepCache {
  Vec x;       // normalized input
  Vec h_prev;
  Vec z, r, c;
  Vec h;       // new hidden
  Vec y;       // residual (normalized)
};

namespace detail {

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Forward pass without argument checks; writes everything into `cache`.
inline void forward_step(const GruParams& p, const Vec& h_prev, const Vec& x,
                         StepCache& cache) {
  cache.x = x;
  cache.h_prev = h_prev;
  cache.z.noalias() = p.update.input * x;
  cache.z.noalias() += p.update.recurrent * h_prev;
  cache.z += p.update.bias;
  cache.z = cache.z.unaryExpr(&sigmoid);

  cache.r.noalias() = p.reset.input * x;
  cache.r.noalias() += p.reset.recurrent * h_prev;
  cache.r += p.reset.bias;
  cache.r = cache.r.unaryExpr(&sigmoid);

  cache.c.noalias() = p.candidate.input * x;
  cache.c.noalias() += p.candidate.recurrent * cache.r.cwiseProduct(h_prev);
  cache.c += p.candidate.bias;
  cache.c = cache.c.array().tanh().matrix();

  cache.h = h_prev + cache.z.cwiseProduct(cache.c - h_prev);
  cache.y.noalias() = p.out_weight * cache.h;
  cache.y += p.out_bias;
}

/**
 * Backward through one step.
 *
 * dy:     dL/dy for this step
 * dh:     on entry dL/dh' arriving from the next step; on exit dL/dh_prev
 * grad:   accumulated parameter gradients (same shapes as params)
 */
inline void backward_step(const GruParams& p, const StepCache& s,
                          const Vec& dy, Vec& dh, GruParams& grad) {
  grad.out_weight.noalias() += dy * s.h.transpose();
  grad.out_bias += dy;
  dh.noalias() += p.out_weight.transpose() * dy;

  const Vec dz = dh.cwiseProduct(s.c - s.h_prev);
  const Vec dc = dh.cwiseProduct(s.z);
  Vec dh_prev = dh.cwiseProduct(Vec::Ones(s.z.size()) - s.z);

  const Vec da_c =
      dc.array() * (1.0 - s.c.array().square());
  const Vec rh = s.r.cwiseProduct(s.h_prev);
  grad.candidate.input.noalias() += da_c * s.x.transpose();
  grad.candidate.recurrent.noalias() += da_c * rh.transpose();
  grad.candidate.bias += da_c;
  const Vec drh = p.candidate.recurrent.transpose() * da_c;
  const Vec dr = drh.cwiseProduct(s.h_prev);
  dh_prev += drh.cwiseProduct(s.r);

  const Vec da_r = dr.array() * s.r.array() * (1.0 - s.r.array());
  grad.reset.input.noalias() += da_r * s.x.transpose();
  grad.reset.recurrent.noalias() += da_r * s.h_prev.transpose();
  grad.reset.bias += da_r;
  dh_prev.noalias() += p.reset.recurrent.transpose() * da_r;

  const Vec da_z = dz.array() * s.z.array() * (1.0 - s.z.array());
  grad.update.input.noalias() += da_z * s.x.transpose();
  grad.update.recurrent.noalias() += da_z * s.h_prev.transpose();
  grad.update.bias += da_z;
  dh_prev.noalias() += p.update.recurrent.transpose() * da_z;

  dh = std::move(dh_prev);
}

}  // namespace detail

struct CellOutput {
  Vec hidden;
  Vec residual;  // normalized units
};

/// One GRU step followed by the residual read-out.
inline CellOutput gru_cell_step(const GruParams& params, const Vec& hidden,
                                const Vec& x_norm) {
  dcomp::detail::require(hidden.size() == params.hidden_dim,
                         "gru_cell_step: hidden has wrong length");
  dcomp::detail::require(x_norm.size() == params.input_dim,
                         "gru_cell_step: input has wrong length");
  if (!hidden.allFinite() || !x_norm.allFinite()) {
    throw NumericError("gru_cell_step: non-finite input");
  }
  StepCache cache;
  detail::forward_step(params, hidden, x_norm, cache);
  return {std::move(cache.h), std::move(cache.y)};
}

}  // namespace gru
}  // namespace dcomp
