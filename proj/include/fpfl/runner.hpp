#pragma once

#include <chrono>

#include "fpfl/config.hpp"
#include "fpfl/federation.hpp"
#include "fpfl/report.hpp"

namespace fpfl {

// Dispatch one configured run. For fpfl mode with an epsilon target, the
// noise multiplier is calibrated inside run_fpfl and recorded in the result.
inline RunReport run(const RunConfig& cfg) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.config = cfg;
  if (cfg.mode == RunMode::kFpfl)
    report.result = run_fpfl(cfg);
  else
    report.result = run_baseline(cfg, cfg.mode);
  auto t1 = std::chrono::steady_clock::now();
  report.wall_clock_seconds =
      std::chrono::duration<double>(t1 - t0).count();
  return report;
}

}  // namespace fpfl
