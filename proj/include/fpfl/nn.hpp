#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fpfl/common.hpp"

namespace fpfl {

// Flat view of all model parameters in the canonical layer order:
// for each layer k, W_k row-major (out x in) followed by b_k.
using ParamVector = std::vector<double>;

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// Feedforward binary classifier: ReLU hidden layers, sigmoid output clamped
// into [kProbClamp, 1 - kProbClamp]. Final layer width must be 1.
struct Mlp {
  std::vector<std::size_t> layer_sizes;        // {in, h1, ..., 1}
  std::vector<std::vector<double>> weights;    // per layer, out x in row-major
  std::vector<std::vector<double>> biases;     // per layer, out

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_sizes.front(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k)
      n += weights[k].size() + biases[k].size();
    return n;
  }

  // Glorot-uniform weights, zero biases.
  static Mlp init(std::vector<std::size_t> sizes, RngStream& rng) {
    if (sizes.size() < 2) throw std::invalid_argument("mlp: need >= 2 layers");
    if (sizes.back() != 1)
      throw std::invalid_argument("mlp: output width must be 1");
    Mlp m;
    m.layer_sizes = std::move(sizes);
    for (std::size_t k = 0; k + 1 < m.layer_sizes.size(); ++k) {
      std::size_t fan_in = m.layer_sizes[k];
      std::size_t fan_out = m.layer_sizes[k + 1];
      double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::vector<double> w(fan_out * fan_in);
      for (double& x : w) x = rng.next_uniform(-bound, bound);
      m.weights.push_back(std::move(w));
      m.biases.emplace_back(fan_out, 0.0);
    }
    return m;
  }

  // Zero-parameter model of the given shape (useful for tests).
  static Mlp zeros(std::vector<std::size_t> sizes) {
    RngStream rng(0);
    Mlp m = init(std::move(sizes), rng);
    for (auto& w : m.weights) std::fill(w.begin(), w.end(), 0.0);
    return m;
  }
};

inline double clamp_prob(double p) {
  return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

// Per-sample activations; reused across samples to avoid reallocation.
struct BackpropWorkspace {
  std::vector<std::vector<double>> acts;  // acts[k] = output of layer k-1
  double raw_sigmoid = 0.0;               // unclamped output
  ParamVector scratch;                    // one per-example gradient

  void resize(const Mlp& m) {
    acts.resize(m.layer_sizes.size());
    for (std::size_t k = 0; k < m.layer_sizes.size(); ++k)
      acts[k].assign(m.layer_sizes[k], 0.0);
    scratch.assign(m.param_count(), 0.0);
  }
};

// Forward pass that records activations. Returns the clamped probability.
inline double forward_traced(const Mlp& m, std::span<const double> x,
                             BackpropWorkspace& ws) {
  if (x.size() != m.input_dim())
    throw std::invalid_argument("forward: input dimension mismatch");
  std::copy(x.begin(), x.end(), ws.acts[0].begin());
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    const auto& in = ws.acts[k];
    auto& out = ws.acts[k + 1];
    std::size_t n_out = m.layer_sizes[k + 1];
    std::size_t n_in = m.layer_sizes[k];
    const double* w = m.weights[k].data();
    bool last = (k + 1 == m.num_layers());
    for (std::size_t o = 0; o < n_out; ++o) {
      double z = m.biases[k][o];
      const double* wr = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) z += wr[i] * in[i];
      if (!std::isfinite(z))
        throw NumericError("forward: non-finite pre-activation",
                           static_cast<int>(k));
      out[o] = last ? z : std::max(0.0, z);
    }
  }
  ws.raw_sigmoid = sigmoid(ws.acts.back()[0]);
  return clamp_prob(ws.raw_sigmoid);
}

// Backward pass for one sample: writes seed * dp/dparams into ws.scratch
// (canonical flat order). `seed` is dLoss/dprob for this sample. The clamp
// is treated as a hard stop: saturated outputs get zero gradient.
inline void backward_traced(const Mlp& m, double seed, BackpropWorkspace& ws) {
  std::fill(ws.scratch.begin(), ws.scratch.end(), 0.0);
  double s = ws.raw_sigmoid;
  double dp_dz = (s > kProbClamp && s < 1.0 - kProbClamp) ? s * (1.0 - s) : 0.0;
  std::vector<double> delta{seed * dp_dz};

  // Offsets of each layer's W block in the flat vector.
  std::size_t offset = 0;
  std::vector<std::size_t> w_off(m.num_layers());
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    w_off[k] = offset;
    offset += m.weights[k].size() + m.biases[k].size();
  }

  for (std::size_t k = m.num_layers(); k-- > 0;) {
    std::size_t n_out = m.layer_sizes[k + 1];
    std::size_t n_in = m.layer_sizes[k];
    const auto& in = ws.acts[k];
    double* gw = ws.scratch.data() + w_off[k];
    double* gb = gw + n_out * n_in;
    for (std::size_t o = 0; o < n_out; ++o) {
      double d = delta[o];
      double* gwr = gw + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) gwr[i] = d * in[i];
      gb[o] = d;
    }
    if (k == 0) break;
    std::vector<double> prev(n_in, 0.0);
    const double* w = m.weights[k].data();
    for (std::size_t o = 0; o < n_out; ++o) {
      double d = delta[o];
      const double* wr = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) prev[i] += wr[i] * d;
    }
    // ReLU derivative: activation > 0 iff pre-activation > 0.
    for (std::size_t i = 0; i < n_in; ++i)
      if (!(ws.acts[k][i] > 0.0)) prev[i] = 0.0;
    delta = std::move(prev);
  }
}

}  // namespace detail

// Deterministic forward pass; clamped probability in (0, 1).
inline double forward(const Mlp& m, std::span<const double> x) {
  thread_local detail::BackpropWorkspace ws;
  ws.resize(m);
  return detail::forward_traced(m, x, ws);
}

inline std::vector<double> forward_batch(const Mlp& m,
                                         const FeatureMatrix& X) {
  detail::BackpropWorkspace ws;
  ws.resize(m);
  std::vector<double> out(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i)
    out[i] = detail::forward_traced(m, X.row(i), ws);
  return out;
}

inline ParamVector flatten(const Mlp& m) {
  ParamVector v;
  v.reserve(m.param_count());
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    v.insert(v.end(), m.weights[k].begin(), m.weights[k].end());
    v.insert(v.end(), m.biases[k].begin(), m.biases[k].end());
  }
  return v;
}

inline void unflatten(Mlp& m, std::span<const double> v) {
  if (v.size() != m.param_count())
    throw std::invalid_argument("unflatten: size mismatch");
  std::size_t off = 0;
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    std::copy(v.begin() + off, v.begin() + off + m.weights[k].size(),
              m.weights[k].begin());
    off += m.weights[k].size();
    std::copy(v.begin() + off, v.begin() + off + m.biases[k].size(),
              m.biases[k].begin());
    off += m.biases[k].size();
  }
}

// Per-example point losses. Both have dLoss/dprob = (p - t) / (p (1 - p)):
// for kBinaryCrossEntropy the target is the 0/1 label, for kDistillation it
// is the teacher probability.
enum class PointLoss { kBinaryCrossEntropy, kDistillation };

using GradBatch = std::vector<ParamVector>;

// Exact per-example gradients of the chosen point loss, one entry per row.
inline GradBatch per_example_grads(const Mlp& m, const FeatureMatrix& X,
                                   std::span<const double> targets,
                                   PointLoss /*loss*/) {
  if (X.rows == 0) throw std::invalid_argument("per_example_grads: empty batch");
  if (targets.size() != X.rows)
    throw std::invalid_argument("per_example_grads: target size mismatch");
  detail::BackpropWorkspace ws;
  ws.resize(m);
  GradBatch out;
  out.reserve(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double p = detail::forward_traced(m, X.row(i), ws);
    double seed = (p - targets[i]) / (p * (1.0 - p));
    detail::backward_traced(m, seed, ws);
    for (double g : ws.scratch)
      if (!std::isfinite(g))
        throw NumericError("per_example_grads: non-finite gradient");
    out.push_back(ws.scratch);
  }
  return out;
}

// Accumulates sum_i scale_i * seeds[i] * dp_i/dparams over the batch in row
// order, where scale_i clips each per-example gradient to `clip_norm`
// (pass kInf for no clipping). Both the plain batch gradient and the DP
// pre-noise sum go through this one path, so the sigma=0 / large-C
// degeneracy is exact by construction.
inline ParamVector accumulate_example_grads(const Mlp& m,
                                            const FeatureMatrix& X,
                                            std::span<const double> seeds,
                                            double clip_norm = kInf) {
  if (seeds.size() != X.rows)
    throw std::invalid_argument("accumulate_example_grads: seed size mismatch");
  detail::BackpropWorkspace ws;
  ws.resize(m);
  ParamVector acc(m.param_count(), 0.0);
  for (std::size_t i = 0; i < X.rows; ++i) {
    detail::forward_traced(m, X.row(i), ws);
    detail::backward_traced(m, seeds[i], ws);
    if (clip_norm < kInf) {
      double norm = l2_norm(ws.scratch);
      if (!std::isfinite(norm))
        throw NumericError("accumulate_example_grads: non-finite gradient");
      if (norm > clip_norm) {
        double scale = clip_norm / norm;
        for (double& g : ws.scratch) g *= scale;
      }
    }
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += ws.scratch[j];
  }
  return acc;
}

// params - eta * grad.
inline ParamVector sgd_step(const ParamVector& params, const ParamVector& grad,
                            double eta) {
  if (params.size() != grad.size())
    throw std::invalid_argument("sgd_step: shape mismatch");
  if (!(eta > 0)) throw std::invalid_argument("sgd_step: eta must be > 0");
  ParamVector out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    out[i] = params[i] - eta * grad[i];
  return out;
}

// In-place SGD update on a model, canonical flat order.
inline void apply_sgd_step(Mlp& m, std::span<const double> grad, double eta) {
  if (grad.size() != m.param_count())
    throw std::invalid_argument("apply_sgd_step: shape mismatch");
  std::size_t off = 0;
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    for (double& w : m.weights[k]) w -= eta * grad[off++];
    for (double& b : m.biases[k]) b -= eta * grad[off++];
  }
}

struct AdamState {
  std::vector<double> m1, m2;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t n) : m1(n, 0.0), m2(n, 0.0) {}
};

inline void apply_adam_step(Mlp& m, std::span<const double> grad, double lr,
                            AdamState& st) {
  if (grad.size() != m.param_count() || st.m1.size() != grad.size())
    throw std::invalid_argument("apply_adam_step: shape mismatch");
  st.t += 1;
  double bc1 = 1.0 - std::pow(st.beta1, st.t);
  double bc2 = 1.0 - std::pow(st.beta2, st.t);
  std::size_t off = 0;
  auto update = [&](double& p) {
    double g = grad[off];
    st.m1[off] = st.beta1 * st.m1[off] + (1.0 - st.beta1) * g;
    st.m2[off] = st.beta2 * st.m2[off] + (1.0 - st.beta2) * g * g;
    p -= lr * (st.m1[off] / bc1) / (std::sqrt(st.m2[off] / bc2) + st.eps);
    ++off;
  };
  for (std::size_t k = 0; k < m.num_layers(); ++k) {
    for (double& w : m.weights[k]) update(w);
    for (double& b : m.biases[k]) update(b);
  }
}

}  // namespace fpfl
