#pragma once

// Run configuration: flat `key = value` text with dotted keys. A `[section]`
// line prefixes the keys that follow it, so
//
//   [objective]
//   alpha = 0.5
//
// is the same as `objective.alpha = 0.5`. `#` starts a comment. Unknown keys
// are an error.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfnvi/nnet.hpp"
#include "gfnvi/objectives.hpp"
#include "gfnvi/policy.hpp"
#include "gfnvi/targets.hpp"

namespace gfnvi {

struct TargetSpec {
  std::string kind = "density";  // density | ising | tabular | ebm
  DensityParams density;
  std::string densityFile;  // JSON sidecar written by export-density; overrides density.*
  int isingSide = 3;
  double isingBeta = 0.2;
  std::uint64_t tabularSeed = 1;
  int tabularDim = 3;
  /// Where backward trajectories start: exact | dataset | none.
  std::string sampler = "exact";
  int trainSize = 2000;
  int testSize = 200;
};

struct EnergySpec {
  std::vector<int> hidden{64};
  Activation activation = Activation::LeakyRelu;
  double initScale = 1.0;
  OptimizerConfig optimizer{OptimizerConfig::Method::Adam, 1e-3};
  int chainSteps = 10;
  int backDepth = 0;  // 0 selects ceil(D/2)
  int batch = 32;
  int every = 1;  // policy steps per CD step
};

struct RunConfig {
  std::uint64_t seed = 0;
  int steps = 1000;
  int evalEvery = 100;
  int elboSamples = 256;
  int nllSamples = 100;
  std::string oracle = "auto";  // auto | true | false
  std::string outputDir = "runs/default";
  bool recordWallTime = false;

  TargetSpec target;
  PolicyConfig policy;
  ObjectiveConfig objective;
  OptimizerConfig optimizer{OptimizerConfig::Method::Adam, 1e-3};
  double psiLr = 1e-1;
  EnergySpec energy;

  RunConfig();
};

using KeyValues = std::map<std::string, std::string>;

/// Parses the text format into ordered key/value pairs. Throws ConfigError.
KeyValues parseKeyValues(const std::string& text);
KeyValues readKeyValues(const std::filesystem::path& path);

/// Applies one setting. Throws ConfigError for unknown keys or bad values.
void applySetting(RunConfig& config, const std::string& key, const std::string& value);
RunConfig configFromKeyValues(const KeyValues& kv);
RunConfig loadConfig(const std::filesystem::path& path);

/// Every known key with its current value, as JSON.
nlohmann::json configToJson(const RunConfig& config);
/// Every known key with its current value, in the text format.
std::string configToText(const RunConfig& config);

/// Throws ConfigError when the combination of settings cannot run.
void validateConfig(const RunConfig& config);

std::vector<std::string> splitList(const std::string& text);

}  // namespace gfnvi
