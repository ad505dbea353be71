#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fpfl/common.hpp"

namespace fpfl {

namespace detail {

inline double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// log(e^a - e^b), requires a >= b.
inline double log_sub(double a, double b) {
  if (b == -kInf) return a;
  if (b > a) throw NumericError("log_sub: negative difference");
  if (a == b) return -kInf;
  return a + std::log1p(-std::exp(b - a));
}

// log erfc(x), stable for large positive x where erfc underflows.
inline double log_erfc(double x) {
  if (x <= 8.0) return std::log(std::erfc(x));
  double x2 = x * x;
  return -x2 - std::log(x * std::sqrt(M_PI)) +
         std::log1p(-0.5 / x2 + 0.75 / (x2 * x2));
}

// Binomial series bound on the alpha-th moment of the sampled Gaussian
// privacy loss, integer alpha.
inline double log_a_int(double q, double sigma, std::uint64_t alpha) {
  double log_q = std::log(q);
  double log_1mq = std::log1p(-q);
  double inv_2s2 = 1.0 / (2.0 * sigma * sigma);
  double log_a = -kInf;
  double log_binom = 0.0;  // log C(alpha, k), updated incrementally
  for (std::uint64_t k = 0; k <= alpha; ++k) {
    double ka = static_cast<double>(k);
    double term = log_binom + ka * log_q +
                  (static_cast<double>(alpha) - ka) * log_1mq +
                  (ka * ka - ka) * inv_2s2;
    log_a = log_add(log_a, term);
    log_binom += std::log(static_cast<double>(alpha - k)) -
                 std::log(static_cast<double>(k + 1));
  }
  return log_a;
}

// Same moment for fractional alpha: the integral splits at z0 and each side
// expands into a binomial-coefficient series with erfc tails. Terms with
// negative coefficients are subtracted in log space.
inline double log_a_frac(double q, double sigma, double alpha) {
  double log_a0 = -kInf, log_a1 = -kInf;
  double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  double log_q = std::log(q);
  double log_1mq = std::log1p(-q);
  double inv_2s2 = 1.0 / (2.0 * sigma * sigma);
  double sqrt2s = std::sqrt(2.0) * sigma;

  double log_coef = 0.0;  // log |C(alpha, i)|
  int sign = 1;
  for (int i = 0; i < 512; ++i) {
    double ia = static_cast<double>(i);
    double ja = alpha - ia;
    double log_t0 = log_coef + ia * log_q + ja * log_1mq;
    double log_t1 = log_coef + ja * log_q + ia * log_1mq;
    double log_e0 = std::log(0.5) + log_erfc((ia - z0) / sqrt2s);
    double log_e1 = std::log(0.5) + log_erfc((z0 - ja) / sqrt2s);
    double log_s0 = log_t0 + (ia * ia - ia) * inv_2s2 + log_e0;
    double log_s1 = log_t1 + (ja * ja - ja) * inv_2s2 + log_e1;
    if (sign > 0) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0 && i > static_cast<int>(alpha))
      break;
    // C(alpha, i+1) = C(alpha, i) * (alpha - i) / (i + 1)
    double factor = (alpha - ia) / (ia + 1.0);
    if (factor < 0) sign = -sign;
    log_coef += std::log(std::abs(factor));
  }
  return log_add(log_a0, log_a1);
}

}  // namespace detail

// Order grid for composition and conversion. A coarser grid only loosens
// the reported bound.
inline const std::vector<double>& default_rdp_orders() {
  static const std::vector<double> orders = [] {
    std::vector<double> o{1.25, 1.5, 1.75};
    for (int a = 2; a <= 64; ++a) o.push_back(static_cast<double>(a));
    o.push_back(128.0);
    o.push_back(256.0);
    return o;
  }();
  return orders;
}

// Renyi divergence bound of order alpha for one subsampled-Gaussian step
// with sampling probability q and noise multiplier sigma. sigma == 0 means
// an unbounded mechanism and returns +inf.
inline double rdp_per_step(double q, double sigma, double alpha) {
  if (!(q > 0) || q > 1) throw std::invalid_argument("rdp: q outside (0, 1]");
  if (sigma < 0) throw std::invalid_argument("rdp: sigma < 0");
  if (!(alpha > 1)) throw std::invalid_argument("rdp: alpha must be > 1");
  if (sigma == 0) return kInf;
  if (q == 1.0) return alpha / (2.0 * sigma * sigma);
  double log_a;
  if (alpha == std::floor(alpha) && alpha <= 4096)
    log_a = detail::log_a_int(q, sigma, static_cast<std::uint64_t>(alpha));
  else
    log_a = detail::log_a_frac(q, sigma, alpha);
  return std::max(0.0, log_a / (alpha - 1.0));
}

// Accumulated divergence per order across a run. Nonnegative and
// nondecreasing in the number of composed steps for every order.
struct RdpCurve {
  std::vector<double> orders;
  std::vector<double> totals;

  explicit RdpCurve(std::vector<double> ords = default_rdp_orders())
      : orders(std::move(ords)), totals(orders.size(), 0.0) {}

  void accumulate(double q, double sigma, std::uint64_t steps) {
    for (std::size_t i = 0; i < orders.size(); ++i)
      totals[i] += static_cast<double>(steps) * rdp_per_step(q, sigma, orders[i]);
  }

  // eps = min over orders of [total + ln(1/delta)/(alpha - 1)].
  double to_epsilon(double delta) const {
    if (!(delta > 0) || delta >= 1)
      throw std::invalid_argument("rdp: delta outside (0, 1)");
    double best = kInf;
    double log_inv_delta = std::log(1.0 / delta);
    for (std::size_t i = 0; i < orders.size(); ++i)
      best = std::min(best, totals[i] + log_inv_delta / (orders[i] - 1.0));
    return best;
  }
};

// One agent's mechanism history: every Phase-2 step uses the same (q, sigma).
struct PrivacyLedger {
  double sampling_prob = 0.0;
  double noise_multiplier = 0.0;
  std::uint64_t steps = 0;
  double delta = 1e-4;
};

inline double epsilon(const PrivacyLedger& ledger,
                      std::span<const double> orders = {}) {
  if (ledger.steps == 0) return 0.0;
  RdpCurve curve(orders.empty()
                     ? default_rdp_orders()
                     : std::vector<double>(orders.begin(), orders.end()));
  curve.accumulate(ledger.sampling_prob, ledger.noise_multiplier, ledger.steps);
  return curve.to_epsilon(ledger.delta);
}

// Minimal sigma in [0.3, 100] whose composed budget meets eps_target, by
// bisection. epsilon() is strictly decreasing in sigma, so the round-trip
// guarantee epsilon(calibrate_sigma(...)) <= eps_target holds.
inline double calibrate_sigma(double q, std::uint64_t steps, double delta,
                              double eps_target) {
  if (!(eps_target > 0))
    throw std::invalid_argument("calibrate_sigma: eps_target <= 0");
  constexpr double kSigmaLo = 0.3;
  constexpr double kSigmaHi = 100.0;
  auto eps_at = [&](double sigma) {
    return epsilon({q, sigma, steps, delta});
  };
  if (eps_at(kSigmaLo) <= eps_target) return kSigmaLo;
  if (eps_at(kSigmaHi) > eps_target)
    throw std::out_of_range(
        "calibrate_sigma: target unreachable within sigma in [0.3, 100]");
  double lo = kSigmaLo, hi = kSigmaHi;
  while (hi - lo > 1e-4 * hi) {
    double mid = 0.5 * (lo + hi);
    if (eps_at(mid) <= eps_target)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

}  // namespace fpfl
