#pragma once

#include <cmath>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "fpfl/common.hpp"
#include "fpfl/nn.hpp"

namespace fpfl {

enum class FairnessMetricKind { kDemographicParity, kEqualizedOdds };

// -y log p - (1-y) log(1-p). Inputs must already be clamped into (0,1).
inline double bce_loss(double p, int y) {
  return y ? -std::log(p) : -std::log(1.0 - p);
}

inline double bce_grad_p(double p, int y) {
  return (p - static_cast<double>(y)) / (p * (1.0 - p));
}

// Batch prediction means conditioned on the sensitive group, on the label,
// and on both. Groups or cells absent from the batch simply do not appear.
struct GroupStats {
  std::map<int, double> group_mean;                      // E[h | A=a]
  std::map<int, std::size_t> group_count;
  std::map<std::pair<int, int>, double> cell_mean;       // E[h | A=a, Y=y]
  std::map<std::pair<int, int>, std::size_t> cell_count;
  std::map<int, double> label_mean;                      // E[h | Y=y]
  std::map<int, std::size_t> label_count;
  double marginal_mean = 0.0;                            // E[h]
  std::size_t total = 0;
};

inline GroupStats compute_group_stats(std::span<const double> probs,
                                      std::span<const int> groups,
                                      std::span<const int> labels) {
  if (probs.size() != groups.size() || probs.size() != labels.size())
    throw std::invalid_argument("group stats: length mismatch");
  GroupStats st;
  st.total = probs.size();
  double sum = 0.0;
  std::map<int, double> gsum, lsum;
  std::map<std::pair<int, int>, double> csum;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    sum += probs[i];
    gsum[groups[i]] += probs[i];
    st.group_count[groups[i]] += 1;
    lsum[labels[i]] += probs[i];
    st.label_count[labels[i]] += 1;
    auto cell = std::make_pair(groups[i], labels[i]);
    csum[cell] += probs[i];
    st.cell_count[cell] += 1;
  }
  if (st.total > 0) st.marginal_mean = sum / static_cast<double>(st.total);
  for (auto& [a, s] : gsum)
    st.group_mean[a] = s / static_cast<double>(st.group_count[a]);
  for (auto& [y, s] : lsum)
    st.label_mean[y] = s / static_cast<double>(st.label_count[y]);
  for (auto& [c, s] : csum)
    st.cell_mean[c] = s / static_cast<double>(st.cell_count[c]);
  return st;
}

// Max over present groups of |E[h|A=a] - E[h]|.
inline double demp_gap(const GroupStats& st) {
  if (st.total == 0) throw std::invalid_argument("demp_gap: empty batch");
  double best = 0.0;
  for (const auto& [a, mean] : st.group_mean)
    best = std::max(best, std::abs(mean - st.marginal_mean));
  return best;
}

// Max over present (group, label) cells of |E[h|A=a,Y=y] - E[h|Y=y]|.
inline double eo_gap(const GroupStats& st) {
  if (st.total == 0) throw std::invalid_argument("eo_gap: empty batch");
  double best = 0.0;
  for (const auto& [cell, mean] : st.cell_mean)
    best = std::max(best, std::abs(mean - st.label_mean.at(cell.second)));
  return best;
}

namespace detail {

inline double sign_of(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

}  // namespace detail

// Gap value plus d(gap)/d(prob_i) for every sample in the batch. The max is
// a subgradient selection: ties resolve to the lexicographically smallest
// group (or (group, label) cell), and only the selected cell contributes.
struct GapGradient {
  double gap = 0.0;
  std::vector<double> seeds;
};

inline GapGradient demp_gap_with_seeds(std::span<const double> probs,
                                       std::span<const int> groups,
                                       std::span<const int> labels) {
  GroupStats st = compute_group_stats(probs, groups, labels);
  GapGradient out;
  out.seeds.assign(probs.size(), 0.0);
  int best_group = 0;
  double best = -1.0;
  for (const auto& [a, mean] : st.group_mean) {
    double gap = std::abs(mean - st.marginal_mean);
    if (gap > best) {  // strict: first (smallest) group wins ties
      best = gap;
      best_group = a;
    }
  }
  out.gap = best;
  double s = detail::sign_of(st.group_mean.at(best_group) - st.marginal_mean);
  double n_g = static_cast<double>(st.group_count.at(best_group));
  double n = static_cast<double>(st.total);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    double d = -1.0 / n;
    if (groups[i] == best_group) d += 1.0 / n_g;
    out.seeds[i] = s * d;
  }
  return out;
}

inline GapGradient eo_gap_with_seeds(std::span<const double> probs,
                                     std::span<const int> groups,
                                     std::span<const int> labels) {
  GroupStats st = compute_group_stats(probs, groups, labels);
  GapGradient out;
  out.seeds.assign(probs.size(), 0.0);
  std::pair<int, int> best_cell{0, 0};
  double best = -1.0;
  for (const auto& [cell, mean] : st.cell_mean) {
    double gap = std::abs(mean - st.label_mean.at(cell.second));
    if (gap > best) {
      best = gap;
      best_cell = cell;
    }
  }
  out.gap = best;
  double s = detail::sign_of(st.cell_mean.at(best_cell) -
                             st.label_mean.at(best_cell.second));
  double n_c = static_cast<double>(st.cell_count.at(best_cell));
  double n_y = static_cast<double>(st.label_count.at(best_cell.second));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != best_cell.second) continue;
    double d = -1.0 / n_y;
    if (groups[i] == best_cell.first) d += 1.0 / n_c;
    out.seeds[i] = s * d;
  }
  return out;
}

inline GapGradient gap_with_seeds(FairnessMetricKind kind,
                                  std::span<const double> probs,
                                  std::span<const int> groups,
                                  std::span<const int> labels) {
  return kind == FairnessMetricKind::kDemographicParity
             ? demp_gap_with_seeds(probs, groups, labels)
             : eo_gap_with_seeds(probs, groups, labels);
}

struct Phase1Loss {
  double total = 0.0;
  double ce = 0.0;
  double gap = 0.0;
};

// total = mean BCE + lambda * gap over the batch.
inline Phase1Loss phase1_loss(const Mlp& m, const FeatureMatrix& X,
                              std::span<const int> groups,
                              std::span<const int> labels,
                              FairnessMetricKind kind, double lambda) {
  if (lambda < 0) throw std::invalid_argument("phase1_loss: lambda < 0");
  if (X.rows == 0) throw std::invalid_argument("phase1_loss: empty batch");
  std::vector<double> probs = forward_batch(m, X);
  Phase1Loss out;
  for (std::size_t i = 0; i < probs.size(); ++i)
    out.ce += bce_loss(probs[i], labels[i]);
  out.ce /= static_cast<double>(probs.size());
  out.gap = gap_with_seeds(kind, probs, groups, labels).gap;
  out.total = out.ce + lambda * out.gap;
  return out;
}

// Batch gradient of phase1_loss w.r.t. model parameters. The per-sample
// output seed combines mean-BCE and the selected gap cell's subgradient.
inline ParamVector phase1_grad(const Mlp& m, const FeatureMatrix& X,
                               std::span<const int> groups,
                               std::span<const int> labels,
                               FairnessMetricKind kind, double lambda,
                               Phase1Loss* loss_out = nullptr) {
  if (lambda < 0) throw std::invalid_argument("phase1_grad: lambda < 0");
  if (X.rows == 0) throw std::invalid_argument("phase1_grad: empty batch");
  std::vector<double> probs = forward_batch(m, X);
  GapGradient gap = gap_with_seeds(kind, probs, groups, labels);
  double n = static_cast<double>(X.rows);
  std::vector<double> seeds(X.rows);
  double ce = 0.0;
  for (std::size_t i = 0; i < X.rows; ++i) {
    ce += bce_loss(probs[i], labels[i]);
    seeds[i] = bce_grad_p(probs[i], labels[i]) / n + lambda * gap.seeds[i];
  }
  if (loss_out != nullptr) {
    loss_out->ce = ce / n;
    loss_out->gap = gap.gap;
    loss_out->total = loss_out->ce + lambda * gap.gap;
  }
  return accumulate_example_grads(m, X, seeds);
}

// Lagrangian multiplier with its cap and dual learning rate.
struct LagrangeState {
  double lambda = 0.0;
  double lambda_max = 1000.0;
  double dual_lr = 0.05;
};

// lambda <- clamp(lambda + dual_lr * gap, 0, lambda_max).
inline LagrangeState dual_ascent_step(LagrangeState st, double gap) {
  if (gap < 0) throw std::invalid_argument("dual_ascent_step: gap < 0");
  st.lambda = std::min(std::max(st.lambda + st.dual_lr * gap, 0.0),
                       st.lambda_max);
  return st;
}

}  // namespace fpfl
