#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "gfnvi/harness/config.hpp"

namespace gfnvi {

struct VerifyOptions {
  int dim = 3;
  std::uint64_t seed = 1;
  int mcBatches = 10000;
  /// Test hook: added to every psi coefficient before the psi identity check.
  double corruptPsiGradient = 0.0;
};

/// Reads verify.* keys (dim, seed, mc_batches, corrupt_psi_gradient); other
/// keys are ignored. Throws ConfigError.
VerifyOptions verifyOptionsFromKeyValues(const KeyValues& kv);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Structural checks at small D on a random tabular target: normalization,
/// flow conservation, DP vs enumeration, TB/KL gradient equivalence, the psi
/// identity, per-sample identity, Monte Carlo unbiasedness and finite
/// differences.
std::vector<CheckResult> runVerification(const VerifyOptions& options);

/// Prints one PASS/FAIL line per check; returns 0 when all pass, else 2.
int reportVerification(const std::vector<CheckResult>& results, std::ostream& out);

// Monte Carlo helpers shared with the acceptance suite.
struct GradientMoments {
  std::vector<double> mean;
  std::vector<double> se;
  std::vector<double> var;
};

GradientMoments monteCarloGradient(std::size_t dim, int n, const std::function<std::vector<double>(int)>& draw);

/// Fraction of coordinates in [lo, hi) whose mean lies within z standard
/// errors of `exact`, and the worst z-score.
std::pair<double, double> coordinateAgreement(const GradientMoments& mc, const std::vector<double>& exact,
                                              std::size_t lo, std::size_t hi, double z);

}  // namespace gfnvi
