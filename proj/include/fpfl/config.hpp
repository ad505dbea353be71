#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpfl/data.hpp"
#include "fpfl/losses.hpp"

namespace fpfl {

enum class RunMode { kBaselineAccuracy, kBaselineFair, kFpfl };

inline std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::kBaselineAccuracy: return "b1";
    case RunMode::kBaselineFair: return "b2";
    case RunMode::kFpfl: return "fpfl";
  }
  return "?";
}

inline std::string to_string(FairnessMetricKind k) {
  return k == FairnessMetricKind::kDemographicParity ? "demp" : "eo";
}

inline RunMode run_mode_from_string(const std::string& s) {
  if (s == "b1") return RunMode::kBaselineAccuracy;
  if (s == "b2") return RunMode::kBaselineFair;
  if (s == "fpfl") return RunMode::kFpfl;
  throw std::invalid_argument("config: unknown mode '" + s + "'");
}

inline FairnessMetricKind fairness_from_string(const std::string& s) {
  if (s == "demp") return FairnessMetricKind::kDemographicParity;
  if (s == "eo") return FairnessMetricKind::kEqualizedOdds;
  throw std::invalid_argument("config: unknown fairness kind '" + s + "'");
}

enum class OptimizerKind { kAdam, kSgd };

struct DatasetConfig {
  enum class Kind { kCsv, kSynthetic } kind = Kind::kSynthetic;
  std::string path;    // csv only
  std::string schema;  // csv only
  SyntheticConfig synthetic;
};

struct Phase1Config {
  double lambda_init = 10.0;
  double lambda_max = 1000.0;
  double lr = 0.001;
  double dual_lr = 0.05;
  std::size_t batch = 500;
  std::size_t epochs = 200;
  OptimizerKind optimizer = OptimizerKind::kAdam;
};

struct Phase2Config {
  double lr = 0.25;
  double clip_norm = 1.5;
  std::size_t batch = 500;
  std::size_t local_epochs = 5;
  std::size_t rounds = 4;
  std::optional<double> sigma;       // exactly one of sigma / eps_target
  std::optional<double> eps_target;  // for fpfl mode
  double delta = 1e-4;
};

// Fully resolved experiment description; everything a run needs, and
// everything the emitted report embeds for reproduction.
struct RunConfig {
  DatasetConfig dataset;
  RunMode mode = RunMode::kFpfl;
  FairnessMetricKind fairness = FairnessMetricKind::kDemographicParity;
  std::size_t agents = 5;
  std::uint64_t seed = 1;
  std::vector<std::size_t> hidden = {500, 100};
  Phase1Config phase1;
  Phase2Config phase2;
  std::size_t target_samples = 0;  // 0: train size, rounded up to m | N
  double test_fraction = 0.2;
  bool early_stop = false;

  void validate() const;
};

inline void RunConfig::validate() const {
  if (agents == 0) throw std::invalid_argument("config: agents must be >= 1");
  if (!(test_fraction > 0) || test_fraction >= 1)
    throw std::invalid_argument("config: test_fraction outside (0, 1)");
  if (hidden.empty()) throw std::invalid_argument("config: no hidden layers");
  if (phase1.lambda_init < 0 || !(phase1.lambda_max > 0))
    throw std::invalid_argument("config: bad lambda settings");
  if (!(phase1.lr > 0) || phase1.dual_lr < 0)
    throw std::invalid_argument("config: bad phase-1 rates");
  if (phase1.batch == 0 || phase1.epochs == 0)
    throw std::invalid_argument("config: bad phase-1 sizes");
  if (!(phase2.lr > 0) || !(phase2.clip_norm > 0))
    throw std::invalid_argument("config: bad phase-2 rates");
  if (phase2.batch == 0 || phase2.local_epochs == 0 || phase2.rounds == 0)
    throw std::invalid_argument("config: bad phase-2 sizes");
  if (!(phase2.delta > 0) || phase2.delta >= 1)
    throw std::invalid_argument("config: delta outside (0, 1)");
  if (phase2.sigma && phase2.eps_target)
    throw std::invalid_argument("config: sigma and epsilon both set");
  if (mode == RunMode::kFpfl && !phase2.sigma && !phase2.eps_target)
    throw std::invalid_argument("config: fpfl needs sigma or epsilon");
  if (phase2.sigma && *phase2.sigma < 0)
    throw std::invalid_argument("config: sigma < 0");
  if (phase2.eps_target && !(*phase2.eps_target > 0))
    throw std::invalid_argument("config: epsilon target <= 0");
  if (dataset.kind == DatasetConfig::Kind::kCsv &&
      (dataset.path.empty() || dataset.schema.empty()))
    throw std::invalid_argument("config: csv dataset needs path and schema");
}

// Command-line overrides layered on top of the config file.
struct ConfigOverrides {
  std::optional<std::string> mode, fairness;
  std::optional<double> epsilon, sigma, delta;
  std::optional<std::uint64_t> agents, rounds, seed;
};

namespace detail {

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j,
                              const ConfigOverrides& ov = {}) {
  RunConfig c;
  if (j.contains("dataset")) {
    const auto& jd = j.at("dataset");
    std::string kind = jd.value("kind", "synthetic");
    if (kind == "csv") {
      c.dataset.kind = DatasetConfig::Kind::kCsv;
      c.dataset.path = jd.at("path").get<std::string>();
      c.dataset.schema = jd.at("schema").get<std::string>();
    } else if (kind == "synthetic") {
      c.dataset.kind = DatasetConfig::Kind::kSynthetic;
      auto& s = c.dataset.synthetic;
      detail::maybe_get(jd, "n", s.n);
      detail::maybe_get(jd, "num_features", s.num_features);
      detail::maybe_get(jd, "minority_fraction", s.minority_fraction);
      detail::maybe_get(jd, "group_logit_shift", s.group_logit_shift);
      detail::maybe_get(jd, "feature_shift", s.feature_shift);
      detail::maybe_get(jd, "signal_scale", s.signal_scale);
      detail::maybe_get(jd, "intercept", s.intercept);
      detail::maybe_get(jd, "attribute_in_features", s.attribute_in_features);
    } else {
      throw std::invalid_argument("config: unknown dataset kind " + kind);
    }
  }
  if (j.contains("mode"))
    c.mode = run_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("fairness"))
    c.fairness = fairness_from_string(j.at("fairness").get<std::string>());
  detail::maybe_get(j, "agents", c.agents);
  detail::maybe_get(j, "seed", c.seed);
  detail::maybe_get(j, "hidden", c.hidden);
  detail::maybe_get(j, "target_samples", c.target_samples);
  detail::maybe_get(j, "test_fraction", c.test_fraction);
  detail::maybe_get(j, "early_stop", c.early_stop);
  if (j.contains("phase1")) {
    const auto& p = j.at("phase1");
    detail::maybe_get(p, "lambda_init", c.phase1.lambda_init);
    detail::maybe_get(p, "lambda_max", c.phase1.lambda_max);
    detail::maybe_get(p, "lr", c.phase1.lr);
    detail::maybe_get(p, "dual_lr", c.phase1.dual_lr);
    detail::maybe_get(p, "batch", c.phase1.batch);
    detail::maybe_get(p, "epochs", c.phase1.epochs);
    if (p.contains("optimizer")) {
      std::string o = p.at("optimizer").get<std::string>();
      if (o == "adam")
        c.phase1.optimizer = OptimizerKind::kAdam;
      else if (o == "sgd")
        c.phase1.optimizer = OptimizerKind::kSgd;
      else
        throw std::invalid_argument("config: unknown optimizer " + o);
    }
  }
  if (j.contains("phase2")) {
    const auto& p = j.at("phase2");
    detail::maybe_get(p, "lr", c.phase2.lr);
    detail::maybe_get(p, "clip_norm", c.phase2.clip_norm);
    detail::maybe_get(p, "batch", c.phase2.batch);
    detail::maybe_get(p, "local_epochs", c.phase2.local_epochs);
    detail::maybe_get(p, "rounds", c.phase2.rounds);
    detail::maybe_get(p, "delta", c.phase2.delta);
    if (p.contains("sigma")) c.phase2.sigma = p.at("sigma").get<double>();
    if (p.contains("epsilon"))
      c.phase2.eps_target = p.at("epsilon").get<double>();
  }

  if (ov.mode) c.mode = run_mode_from_string(*ov.mode);
  if (ov.fairness) c.fairness = fairness_from_string(*ov.fairness);
  if (ov.epsilon) {
    c.phase2.eps_target = *ov.epsilon;
    c.phase2.sigma.reset();
  }
  if (ov.sigma) {
    c.phase2.sigma = *ov.sigma;
    if (!ov.epsilon) c.phase2.eps_target.reset();
  }
  if (ov.epsilon && ov.sigma)
    throw std::invalid_argument("config: sigma and epsilon both set");
  if (ov.delta) c.phase2.delta = *ov.delta;
  if (ov.agents) c.agents = *ov.agents;
  if (ov.rounds) c.phase2.rounds = *ov.rounds;
  if (ov.seed) c.seed = *ov.seed;

  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path,
                             const ConfigOverrides& ov = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    if (in.peek() != std::ifstream::traits_type::eof()) in >> j;
  }
  return parse_config(j, ov);
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  if (c.dataset.kind == DatasetConfig::Kind::kCsv) {
    j["dataset"] = {{"kind", "csv"},
                    {"path", c.dataset.path},
                    {"schema", c.dataset.schema}};
  } else {
    const auto& s = c.dataset.synthetic;
    j["dataset"] = {{"kind", "synthetic"},
                    {"n", s.n},
                    {"num_features", s.num_features},
                    {"minority_fraction", s.minority_fraction},
                    {"group_logit_shift", s.group_logit_shift},
                    {"feature_shift", s.feature_shift},
                    {"signal_scale", s.signal_scale},
                    {"intercept", s.intercept},
                    {"attribute_in_features", s.attribute_in_features}};
  }
  j["mode"] = to_string(c.mode);
  j["fairness"] = to_string(c.fairness);
  j["agents"] = c.agents;
  j["seed"] = c.seed;
  j["hidden"] = c.hidden;
  j["target_samples"] = c.target_samples;
  j["test_fraction"] = c.test_fraction;
  j["early_stop"] = c.early_stop;
  j["phase1"] = {
      {"lambda_init", c.phase1.lambda_init},
      {"lambda_max", c.phase1.lambda_max},
      {"lr", c.phase1.lr},
      {"dual_lr", c.phase1.dual_lr},
      {"batch", c.phase1.batch},
      {"epochs", c.phase1.epochs},
      {"optimizer",
       c.phase1.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"}};
  j["phase2"] = {{"lr", c.phase2.lr},
                 {"clip_norm", c.phase2.clip_norm},
                 {"batch", c.phase2.batch},
                 {"local_epochs", c.phase2.local_epochs},
                 {"rounds", c.phase2.rounds},
                 {"delta", c.phase2.delta}};
  if (c.phase2.sigma) j["phase2"]["sigma"] = *c.phase2.sigma;
  if (c.phase2.eps_target) j["phase2"]["epsilon"] = *c.phase2.eps_target;
  return j;
}

}  // namespace fpfl
