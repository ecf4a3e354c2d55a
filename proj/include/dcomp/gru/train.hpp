// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcomp/gru/model.hpp"

namespace dcomp::gru {

struct TrainSpec {
  int epochs = 15;
  double learning_rate = 1e-3;
  int batch_size = 16;         // sequences per optimizer batch
  int truncation_length = 32;  // BPTT window, in transitions
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int hidden_dim = 16;
  double scale_floor = kDefaultScaleFloor;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (epochs <= 0 || !(learning_rate > 0) || batch_size <= 0 ||
        truncation_length <= 0 || hidden_dim <= 0) {
      throw UsageError("TrainSpec: epochs, learning_rate, batch_size, "
                       "truncation_length and hidden_dim must be positive");
    }
    if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) {
      throw UsageError("TrainSpec: validation_fraction must lie in (0, 0.5]");
    }
  }
};

// An episode in model coordinates: inputs[t] = norm(x_t) and
// targets[t] = (x_{t+1} - x_t) / scale, for every transition t.
struct PreparedEpisode {
  std::vector<Vec> inputs;
  std::vector<Vec> targets;

  std::size_t size() const { return inputs.size(); }
};

inline PreparedEpisode prepare_episode(const Episode& ep, const Normalizer& n) {
  PreparedEpisode out;
  if (ep.samples.size() < 2) return out;
  const std::size_t len = ep.samples.size() - 1;
  out.inputs.reserve(len);
  out.targets.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    out.inputs.push_back(n.normalize(ep.samples[t].state));
    out.targets.push_back(
        n.residual_to_normalized(ep.samples[t + 1].state - ep.samples[t].state));
  }
  return out;
}

struct LossAndGradient {
  double loss = 0.0;  // mean squared error over all terms
  std::size_t terms = 0;
  GruParams grad;
};

/**
 * Mean-squared residual loss over the given episodes with truncated BPTT.
 *
 * Each episode starts from a zero hidden state. Every `truncation` transitions
 * the gradient path is cut; the hidden value itself carries over. With
 * truncation >= the longest episode this is the exact gradient of the loss.
 */
inline LossAndGradient loss_and_gradient(const GruParams& params,
                                         std::span<const PreparedEpisode> episodes,
                                         int truncation) {
  dcomp::detail::require(truncation > 0, "loss_and_gradient: truncation must be > 0");
  LossAndGradient out;
  out.grad = GruParams::zeros(params.input_dim, params.hidden_dim);
  double sum = 0.0;
  std::vector<StepCache> caches(static_cast<std::size_t>(truncation));
  Vec dy(params.input_dim);
  for (const auto& ep : episodes) {
    Vec h = Vec::Zero(params.hidden_dim);
    for (std::size_t start = 0; start < ep.size();
         start += static_cast<std::size_t>(truncation)) {
      const std::size_t end =
          std::min(ep.size(), start + static_cast<std::size_t>(truncation));
      for (std::size_t t = start; t < end; ++t) {
        StepCache& c = caches[t - start];
        detail::forward_step(params, h, ep.inputs[t], c);
        h = c.h;
        sum += (c.y - ep.targets[t]).squaredNorm();
      }
      Vec dh = Vec::Zero(params.hidden_dim);
      for (std::size_t t = end; t-- > start;) {
        const StepCache& c = caches[t - start];
        dy = 2.0 * (c.y - ep.targets[t]);
        detail::backward_step(params, c, dy, dh, out.grad);
      }
    }
    out.terms += ep.size() * static_cast<std::size_t>(params.input_dim);
  }
  if (out.terms > 0) {
    out.loss = sum / static_cast<double>(out.terms);
    const double inv = 1.0 / static_cast<double>(out.terms);
    out.grad.for_each([&](auto& t) { t *= inv; });
  }
  return out;
}

/// Sum of squared normalized residual errors over an episode, starting from a
/// zero hidden state. Used as a reference by the stream evaluator's tests.
inline double episode_squared_error(const GruParams& params, const PreparedEpisode& ep) {
  StepCache c;
  Vec h = Vec::Zero(params.hidden_dim);
  double sum = 0.0;
  for (std::size_t t = 0; t < ep.size(); ++t) {
    detail::forward_step(params, h, ep.inputs[t], c);
    h = c.h;
    sum += (c.y - ep.targets[t]).squaredNorm();
  }
  return sum;
}

/**
 * Evaluates the squared residual error over a flat stream of samples where
 * episode boundaries are marked only by terminal flags. The hidden state is
 * reset to zero after each terminal sample and no transition is scored across
 * a boundary.
 */
inline double stream_squared_error(const GruParams& params, const Normalizer& norm,
                                   std::span<const Sample> stream) {
  StepCache c;
  Vec h = Vec::Zero(params.hidden_dim);
  double sum = 0.0;
  for (std::size_t t = 0; t + 1 < stream.size(); ++t) {
    if (stream[t].terminal) {
      h.setZero();
      continue;
    }
    detail::forward_step(params, h, norm.normalize(stream[t].state), c);
    h = c.h;
    const Vec target =
        norm.residual_to_normalized(stream[t + 1].state - stream[t].state);
    sum += (c.y - target).squaredNorm();
  }
  return sum;
}

/// Mean normalized squared residual error over a set of episodes.
inline double normalized_mse(const GruParams& params,
                             std::span<const PreparedEpisode> episodes) {
  double sum = 0.0;
  std::size_t terms = 0;
  for (const auto& ep : episodes) {
    sum += episode_squared_error(params, ep);
    terms += ep.size() * static_cast<std::size_t>(params.input_dim);
  }
  return terms == 0 ? 0.0 : sum / static_cast<double>(terms);
}

/// Per-component mean squared one-step prediction error in state units.
inline Vec compute_training_mse(const TransitionModel& model,
                                const TrajectoryDataset& holdout) {
  if (holdout.role == DatasetRole::Train) {
    throw UsageError("compute_training_mse: dataset is tagged as training data");
  }
  if (holdout.dim != model.state_dim()) {
    throw ContractViolation("compute_training_mse: dataset dim does not match model");
  }
  Vec sum = Vec::Zero(model.state_dim());
  std::size_t n = 0;
  for (const auto& ep : holdout.episodes) {
    Vec h = model.zero_hidden();
    for (std::size_t t = 0; t + 1 < ep.samples.size(); ++t) {
      Prediction p = predict_next(model, h, ep.samples[t].state);
      sum += (p.state - ep.samples[t + 1].state).cwiseAbs2();
      h = std::move(p.hidden);
      ++n;
    }
  }
  if (n == 0) throw UsageError("compute_training_mse: holdout has no transitions");
  return sum / static_cast<double>(n);
}

// Adam state over a GruParams-shaped parameter set.
class Adam {
 public:
  Adam(const GruParams& like, double lr, double beta1, double beta2, double eps)
      : m_(GruParams::zeros(like.input_dim, like.hidden_dim)),
        v_(m_),
        lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {}

  void step(GruParams& params, const GruParams& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    zip_tensors(m_, grad, [&](auto& m, const auto& g) {
      m = beta1_ * m + (1.0 - beta1_) * g;
    });
    zip_tensors(v_, grad, [&](auto& v, const auto& g) {
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
    });
    // params -= lr * mhat / (sqrt(vhat) + eps)
    GruParams update = m_;
    zip_tensors(update, v_, [&](auto& u, const auto& v) {
      u = (u.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    });
    zip_tensors(params, update, [&](auto& p, const auto& u) { p -= lr_ * u; });
  }

 private:
  GruParams m_;
  GruParams v_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
};

struct TrainResult {
  TransitionModel model;
  std::vector<double> loss_curve;   // validation normalized MSE per epoch
  std::vector<double> train_curve;  // mean training-window loss per epoch
};

struct Split {
  TrajectoryDataset train;
  TrajectoryDataset holdout;
};

/// Keeps only converged-policy episodes and splits them by a seeded shuffle.
inline Split split_dataset(const TrajectoryDataset& ds, double validation_fraction,
                           std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    if (ds.episodes[e].tag == kConvergedTag) idx.push_back(e);
  }
  if (idx.size() < 2) {
    throw UsageError("training needs at least 2 converged-policy episodes, got " +
                     std::to_string(idx.size()));
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(validation_fraction * static_cast<double>(idx.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);

  Split s;
  s.train.dim = s.holdout.dim = ds.dim;
  s.train.dt = s.holdout.dt = ds.dt;
  s.train.role = DatasetRole::Train;
  s.holdout.role = DatasetRole::Holdout;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto& dst = i < n_val ? s.holdout : s.train;
    dst.episodes.push_back(ds.episodes[idx[i]]);
  }
  return s;
}

// Called after every epoch with (epoch index, validation MSE).
using EpochCallback = std::function<void(int, double)>;

inline TrainResult train_transition_model(const TrajectoryDataset& dataset,
                                          const TrainSpec& spec,
                                          const EpochCallback& on_epoch = {}) {
  spec.validate();
  dataset.validate();
  for (const auto& ep : dataset.episodes) {
    if (ep.samples.size() < 2) {
      throw UsageError("train_transition_model: every episode needs >= 2 samples");
    }
  }
  Split split = split_dataset(dataset, spec.validation_fraction, spec.seed);

  TrainResult res;
  res.model.normalizer = fit_normalizer(split.train, spec.scale_floor);
  // Gates start uniform; the read-out starts at zero so the untrained model
  // is the persistence model x' = x.
  res.model.params = GruParams::random_uniform(dataset.dim, spec.hidden_dim, spec.seed);
  res.model.params.out_weight.setZero();
  res.model.params.out_bias.setZero();

  std::vector<PreparedEpisode> train, val;
  for (const auto& ep : split.train.episodes)
    train.push_back(prepare_episode(ep, res.model.normalizer));
  for (const auto& ep : split.holdout.episodes)
    val.push_back(prepare_episode(ep, res.model.normalizer));

  GruParams& params = res.model.params;
  Adam adam(params, spec.learning_rate, spec.beta1, spec.beta2, spec.epsilon);
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> order(train.size());
  const auto T = static_cast<std::size_t>(spec.truncation_length);

  std::vector<std::vector<StepCache>> caches;
  std::vector<Vec> hidden;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(rng)]);
    }
    double epoch_sum = 0.0;
    std::size_t epoch_terms = 0;
    int batch_index = 0;
    for (std::size_t b0 = 0; b0 < order.size();
         b0 += static_cast<std::size_t>(spec.batch_size), ++batch_index) {
      const std::size_t b1 =
          std::min(order.size(), b0 + static_cast<std::size_t>(spec.batch_size));
      const std::size_t nb = b1 - b0;
      std::size_t longest = 0;
      for (std::size_t i = b0; i < b1; ++i) longest = std::max(longest, train[order[i]].size());
      hidden.assign(nb, Vec::Zero(params.hidden_dim));
      caches.resize(nb);
      for (auto& c : caches) c.resize(T);

      for (std::size_t start = 0; start < longest; start += T) {
        GruParams grad = GruParams::zeros(params.input_dim, params.hidden_dim);
        double sum = 0.0;
        std::size_t terms = 0;
        for (std::size_t k = 0; k < nb; ++k) {
          const PreparedEpisode& ep = train[order[b0 + k]];
          if (start >= ep.size()) continue;
          const std::size_t end = std::min(ep.size(), start + T);
          for (std::size_t t = start; t < end; ++t) {
            StepCache& c = caches[k][t - start];
            detail::forward_step(params, hidden[k], ep.inputs[t], c);
            hidden[k] = c.h;
            sum += (c.y - ep.targets[t]).squaredNorm();
          }
          Vec dh = Vec::Zero(params.hidden_dim);
          for (std::size_t t = end; t-- > start;) {
            const StepCache& c = caches[k][t - start];
            detail::backward_step(params, c, 2.0 * (c.y - ep.targets[t]), dh, grad);
          }
          terms += (end - start) * static_cast<std::size_t>(params.input_dim);
        }
        if (!std::isfinite(sum)) {
          throw NumericError("training loss is not finite at epoch " +
                             std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
        }
        const double inv = 1.0 / static_cast<double>(terms);
        grad.for_each([&](auto& t) { t *= inv; });
        adam.step(params, grad);
        epoch_sum += sum;
        epoch_terms += terms;
      }
    }
    const double val_mse = normalized_mse(params, val);
    if (!std::isfinite(val_mse)) {
      throw NumericError("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    res.loss_curve.push_back(val_mse);
    res.train_curve.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(epoch_terms, 1)));
    if (on_epoch) on_epoch(epoch, val_mse);
  }
  res.model.train_mse = compute_training_mse(res.model, split.holdout);
  return res;
}

}  // namespace dcomp::gru
