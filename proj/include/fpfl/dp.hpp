#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fpfl/common.hpp"
#include "fpfl/nn.hpp"

namespace fpfl {

// Inputs of one private training run: clipping norm C, noise multiplier
// sigma, expected batch size B, per-example sampling probability q, and the
// learning rate.
struct DpConfig {
  double clip_norm = 1.5;
  double noise_multiplier = 0.0;
  std::size_t batch_size = 500;
  double sampling_prob = 0.05;
  double lr = 0.25;

  void validate() const {
    if (!(clip_norm > 0)) throw std::invalid_argument("dp: clip_norm <= 0");
    if (noise_multiplier < 0)
      throw std::invalid_argument("dp: noise_multiplier < 0");
    if (!(sampling_prob > 0) || sampling_prob > 1)
      throw std::invalid_argument("dp: sampling_prob outside (0, 1]");
    if (batch_size == 0) throw std::invalid_argument("dp: batch_size == 0");
    if (!(lr > 0)) throw std::invalid_argument("dp: lr <= 0");
  }
};

// g / max(1, ||g||_2 / C): norm at most C, direction preserved, identity
// when the norm is already within bound.
inline ParamVector clip_to_norm(ParamVector g, double clip_norm) {
  if (!(clip_norm > 0)) throw std::invalid_argument("clip: C must be > 0");
  double norm = l2_norm(g);
  if (!std::isfinite(norm)) throw NumericError("clip: non-finite gradient");
  if (norm > clip_norm) {
    double scale = clip_norm / norm;
    for (double& x : g) x *= scale;
  }
  return g;
}

// (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I)) / B, with B the configured
// batch size, not the realized sample count. No noise is drawn when
// sigma == 0, so noiseless runs consume no randomness.
inline ParamVector noisy_aggregate(const GradBatch& grads, const DpConfig& cfg,
                                   RngStream& rng) {
  cfg.validate();
  if (grads.empty()) throw std::invalid_argument("noisy_aggregate: empty batch");
  ParamVector acc(grads.front().size(), 0.0);
  for (const auto& g : grads) {
    ParamVector c = clip_to_norm(g, cfg.clip_norm);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += c[j];
  }
  double noise_std = cfg.noise_multiplier * cfg.clip_norm;
  if (noise_std > 0)
    for (double& x : acc) x += noise_std * rng.next_gaussian();
  double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  for (double& x : acc) x *= inv_b;
  return acc;
}

// Each index included independently with probability q.
inline std::vector<std::size_t> poisson_sample(std::size_t n, double q,
                                               RngStream& rng) {
  if (!(q > 0) || q > 1)
    throw std::invalid_argument("poisson_sample: q outside (0, 1]");
  std::vector<std::size_t> out;
  if (q == 1.0) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (rng.next_double() < q) out.push_back(i);
  return out;
}

// Private model under training: parameters, noise stream, and the step
// counter that drives the accountant.
struct DpTrainState {
  Mlp model;
  std::uint64_t step_count = 0;
  RngStream noise_rng;

  DpTrainState(Mlp m, std::uint64_t noise_seed)
      : model(std::move(m)), noise_rng(noise_seed) {}
};

// One DP-SGD update on an already-sampled batch: clip per example, add
// Gaussian noise to the sum, divide by the configured B, step. The clipped
// sum runs through the same accumulation path as the plain batch gradient.
inline void dp_step(DpTrainState& st, const FeatureMatrix& batch,
                    std::span<const double> targets, PointLoss /*loss*/,
                    const DpConfig& cfg) {
  cfg.validate();
  if (batch.rows == 0) throw std::invalid_argument("dp_step: empty batch");
  std::vector<double> probs = forward_batch(st.model, batch);
  std::vector<double> seeds(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i)
    seeds[i] = (probs[i] - targets[i]) / (probs[i] * (1.0 - probs[i]));
  ParamVector sum =
      accumulate_example_grads(st.model, batch, seeds, cfg.clip_norm);
  double noise_std = cfg.noise_multiplier * cfg.clip_norm;
  if (noise_std > 0)
    for (double& x : sum) x += noise_std * st.noise_rng.next_gaussian();
  double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  for (double& x : sum) x *= inv_b;
  apply_sgd_step(st.model, sum, cfg.lr);
  st.step_count += 1;
}

}  // namespace fpfl
