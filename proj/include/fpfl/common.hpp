#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpfl {

// Sigmoid outputs are clamped into [kProbClamp, 1 - kProbClamp] so every
// cross-entropy term stays finite.
inline constexpr double kProbClamp = 1e-7;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Non-finite value produced during a computation. `layer_index` is -1 when
// the failure is not attributable to a specific network layer.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, int layer_index = -1)
      : std::runtime_error(what), layer_index_(layer_index) {}
  int layer_index() const { return layer_index_; }

 private:
  int layer_index_;
};

// Violation of the federation round contract (e.g. a missing agent).
class ProtocolError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// Stream purposes feeding the seed-derivation rule below. Keeping the ids
// stable keeps every run reproducible from the master seed alone.
enum class StreamPurpose : std::uint64_t {
  kGlobalInit = 1,
  kModelInit = 2,
  kBatchSampler = 3,
  kNoise = 4,
  kSplit = 5,
  kShard = 6,
  kSynthetic = 7,
};

// Derivation rule: stream seed = avalanche over (master, agent, phase,
// purpose). Distinct tuples give independent streams; the same tuple always
// gives the same stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t agent,
                                 std::uint64_t phase, StreamPurpose purpose) {
  std::uint64_t h = detail::mix64(master ^ 0x9e3779b97f4a7c15ULL);
  h = detail::mix64(h ^ (agent + 0x8cb92ba72f3d8dd7ULL));
  h = detail::mix64(h ^ (phase + 0xd6e8feb86659fd93ULL));
  h = detail::mix64(h ^ (static_cast<std::uint64_t>(purpose) +
                         0xa0761d6478bd642fULL));
  return h;
}

// Counter-based generator (splitmix64): the state advances by a fixed odd
// constant and the output is a bijective mix of the counter, so draws are
// reproducible and cheap to fork per stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Standard normal via Box-Muller; the spare draw is cached.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - next_double();  // (0, 1], keeps the log finite
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Dense row-major matrix of sample features.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c)
      : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
  std::span<double> row(std::size_t i) {
    return {data.data() + i * cols, cols};
  }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  FeatureMatrix select(std::span<const std::size_t> idx) const {
    FeatureMatrix out(idx.size(), cols);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto src = row(idx[k]);
      std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
  }
};

}  // namespace fpfl
