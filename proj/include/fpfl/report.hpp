#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpfl/config.hpp"
#include "fpfl/federation.hpp"

namespace fpfl {

// Everything a run produced, plus the resolved config that produced it.
// Serialized fields are deterministic under (config, seed); wall-clock is
// kept in memory only so emitted files are byte-stable.
struct RunReport {
  RunConfig config;
  RunResult result;
  double wall_clock_seconds = 0.0;
};

namespace detail {

inline nlohmann::json opt_to_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json finite_or_string(double v) {
  // JSON has no infinity; unbounded budgets serialize as a marker string.
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf");
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  nlohmann::json j;
  j["accuracy"] = m.accuracy;
  j["demp"] = opt_to_json(m.demp);
  j["eo"] = opt_to_json(m.eo);
  j["demp_thresholded"] = opt_to_json(m.demp_thresholded);
  j["eo_thresholded"] = opt_to_json(m.eo_thresholded);
  nlohmann::json gm = nlohmann::json::object();
  for (const auto& [a, mean] : m.group_mean)
    gm[std::to_string(a)] = mean;
  j["group_mean"] = gm;
  j["partial"] = m.partial;
  return j;
}

}  // namespace detail

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json j;
  j["config"] = config_to_json(r.config);
  j["final"] = detail::metrics_to_json(r.result.final_metrics);
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& rec : r.result.per_round) {
    nlohmann::json jr = detail::metrics_to_json(rec.metrics);
    jr["round"] = rec.round;
    rounds.push_back(jr);
  }
  j["rounds"] = rounds;
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : r.result.agents) {
    agents.push_back({{"id", a.id},
                      {"shard_size", a.shard_size},
                      {"q", a.sampling_prob},
                      {"sigma", a.sigma},
                      {"steps", a.steps},
                      {"delta", a.delta},
                      {"epsilon", detail::finite_or_string(a.epsilon)},
                      {"lambda_trajectory", a.lambda_trajectory}});
  }
  j["agents"] = agents;
  j["sigma_used"] = r.result.sigma_used;
  j["steps_per_agent"] = r.result.steps_per_agent;
  j["partial"] = r.result.partial;
  j["abort_reason"] = r.result.abort_reason;
  return j;
}

// Representative epsilon of a run: the worst (largest) per-agent budget.
inline double report_epsilon(const RunReport& r) {
  double worst = 0.0;
  for (const auto& a : r.result.agents) worst = std::max(worst, a.epsilon);
  return r.result.agents.empty() ? kInf : worst;
}

// One line of minified JSON per run.
inline void emit_json_lines(const std::vector<RunReport>& reports,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit: cannot write " + path);
  for (const auto& r : reports) out << report_to_json(r).dump() << "\n";
}

inline std::string csv_double(double v) {
  if (!std::isfinite(v)) return "inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

// Fixed-contract summary: one row per run, sorted by epsilon.
inline void emit_csv_summary(std::vector<RunReport> reports,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit: cannot write " + path);
  std::stable_sort(reports.begin(), reports.end(),
                   [](const RunReport& a, const RunReport& b) {
                     return report_epsilon(a) < report_epsilon(b);
                   });
  out << "mode,fairness,epsilon,accuracy,demp,eo,seed\n";
  for (const auto& r : reports) {
    const auto& m = r.result.final_metrics;
    out << to_string(r.config.mode) << "," << to_string(r.config.fairness)
        << "," << csv_double(report_epsilon(r)) << ","
        << csv_double(m.accuracy) << ","
        << (m.demp ? csv_double(*m.demp) : "") << ","
        << (m.eo ? csv_double(*m.eo) : "") << "," << r.config.seed << "\n";
  }
}

}  // namespace fpfl
