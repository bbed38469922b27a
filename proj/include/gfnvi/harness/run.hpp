#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "gfnvi/eval.hpp"
#include "gfnvi/harness/config.hpp"

namespace gfnvi {

/// Everything a run needs, built deterministically from a RunConfig.
struct Experiment {
  RunConfig config;
  std::unique_ptr<DiscretizedDensity> density;
  std::unique_ptr<Target> fixedTarget;
  std::unique_ptr<EnergyTarget> energy;
  std::unique_ptr<TerminalSampler> sampler;
  std::vector<State> trainData;
  std::vector<State> testData;
  std::unique_ptr<Policy> policy;
  Layout layout;
  std::vector<double> params;

  const Target& target() const;
  int dim() const { return policy->dim(); }
  bool oracleEnabled() const;
  Checkpoint checkpoint(std::uint64_t step) const;
};

/// Validates the config, builds targets, datasets and initial parameters.
/// Throws ConfigError.
Experiment buildExperiment(const RunConfig& config);

inline const std::vector<std::string>& csvColumns() {
  static const std::vector<std::string> cols{"step", "loss",     "mean_logw", "var_logw", "ess",    "c_used",
                                             "psi",  "nll_test", "elbo",      "kl_exact", "wall_ms"};
  return cols;
}

struct TrainResult {
  int exitCode = 0;  // 0 ok, 3 numeric abort
  std::string message;
  MetricReport report;
  std::vector<double> finalParams;
};

struct TrainOptions {
  bool writeArtifacts = true;
  std::ostream* log = nullptr;
};

/// Runs the training loop. Writes metrics.csv, checkpoint.bin and
/// config-echo.json into config.outputDir when writeArtifacts is set.
TrainResult runTraining(const RunConfig& config, const TrainOptions& options = {});

/// One CSV line (no newline) for a metric row, in csvColumns() order. Absent
/// metrics are left empty.
std::string formatCsvRow(const MetricRow& row);

}  // namespace gfnvi
