#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fpfl/nn.hpp"

namespace fpfl::test {

inline bool near_rel(double a, double b, double rtol, double atol = 1e-8) {
  return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
}

// Central-difference gradient of a scalar function of the model parameters.
// Lives only in tests and never touches the backprop path it checks.
inline std::vector<double> finite_difference_grad(
    const Mlp& model, const std::function<double(const Mlp&)>& f,
    double h = 1e-5) {
  Mlp work = model;
  ParamVector p = flatten(model);
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double saved = p[i];
    p[i] = saved + h;
    unflatten(work, p);
    double fp = f(work);
    p[i] = saved - h;
    unflatten(work, p);
    double fm = f(work);
    p[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Random model with small weights so sigmoid outputs stay away from the
// clamp boundary.
inline Mlp random_small_mlp(std::vector<std::size_t> sizes, RngStream& rng,
                            double scale = 0.8) {
  Mlp m = Mlp::init(std::move(sizes), rng);
  for (auto& w : m.weights)
    for (double& x : w) x *= scale;
  for (auto& b : m.biases)
    for (double& x : b) x = rng.next_uniform(-0.3, 0.3);
  return m;
}

inline FeatureMatrix random_batch(std::size_t n, std::size_t d,
                                  RngStream& rng) {
  FeatureMatrix X(n, d);
  for (double& x : X.data) x = rng.next_gaussian();
  return X;
}

}  // namespace fpfl::test
