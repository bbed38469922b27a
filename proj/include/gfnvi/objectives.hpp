#pragma once

// Training objectives and gradient estimators.
//
// Every estimator is returned as per-sample coefficients (A_s, B_s, C_s) of a
// surrogate scalar
//
//   sum_s A_s log Q(tau_s) + B_s log P_B(tau_s) + C_s log Z_psi,
//
// whose gradient is the estimate. Coefficients already include the 1/S
// averaging. Log-weights are handled in their normalizer-free form
// log w~ = log R + log P_B - log Q; a known log Z can be supplied through
// ObjectiveConfig::logZref.
//
// Control-variate scalings c_s are baselines in log-weight units: the
// reverse-KL payoff is -(log w_s - c_s) and the forward-KL payoff is
// (log w_s - c_s).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfnvi/policy.hpp"
#include "gfnvi/target.hpp"

namespace gfnvi {

enum class Family { AlphaTB, AlphaKL };
enum class ControlVariate { Learned, LooLogW, LooLogZ, LooOptimal, Fixed };
enum class ParamMode { Distinct, SharedBackward, FixedBackward };
enum class Mixing { Deterministic, Bernoulli };
enum class Direction { Forward, Backward };

Family parseFamily(const std::string& name);
ControlVariate parseControlVariate(const std::string& name);
ParamMode parseParamMode(const std::string& name);
Mixing parseMixing(const std::string& name);
std::string familyName(Family f);
std::string controlVariateName(ControlVariate cv);

struct ObjectiveConfig {
  Family family = Family::AlphaTB;
  double alpha = 0.0;
  ControlVariate cv = ControlVariate::Learned;
  double fixedC = 0.0;
  int batchSize = 16;
  ParamMode paramMode = ParamMode::FixedBackward;
  Mixing mixing = Mixing::Deterministic;
  /// Known log Z. Fixed(c) payoffs use log w = log w~ - logZref.
  std::optional<double> logZref;
  /// Parameter count above which LOO_opt refuses to run.
  std::size_t looOptimalCap = 10000;

  void validate() const;
};

struct SampleCoefficients {
  double logQ = 0.0;   // A_s
  double logPB = 0.0;  // B_s
  double psi = 0.0;    // C_s
};

struct Diagnostics {
  double meanLogW = 0.0;
  double varLogW = 0.0;
  double ess = 0.0;
  double cUsed = 0.0;  // mean baseline, in log w~ units
};

struct EstimatorOutput {
  double loss = 0.0;
  std::vector<SampleCoefficients> coefficients;
  /// Extra full-length gradient term for estimators that are not expressible
  /// through scalar coefficients (LOO_opt). Empty when unused.
  std::vector<double> directGradient;
  Diagnostics diagnostics;
};

/// (psi + log Q - log R - log P_B)^2. Throws NonFiniteLoss.
double tbLoss(const WeightedTrajectory& tau, double psi);

/// Mean TB gradient. With `baselines`, the payoff multiplying the Q- and
/// P_B-scores uses b_s in place of psi; the psi coefficient always uses psi.
EstimatorOutput tbGradientBatch(std::span<const WeightedTrajectory> batch, double psi,
                                const std::vector<double>* baselines = nullptr);

struct CvScaling {
  std::vector<double> perSample;  // c_s in log w~ units
  double fullMean = 0.0;          // LOO_logw only: mean over the whole batch
  double rescale = 1.0;           // LOO_logw only: S / (S - 1)
};

/// LOO_logw: mean of the other log-weights. LOO_logZ: log of the mean of the
/// other weights. Throws BatchTooSmall for S < 2.
CvScaling cvScaling(std::span<const double> logws, ControlVariate kind);

/// Per-dimension leave-one-out Cov(g_d, h_d) / Var(h_d). Rows are samples.
/// Dimensions with LOO variance below 1e-18 get 0. Throws BatchTooSmall for S < 3.
std::vector<std::vector<double>> cvOptimalScaling(const std::vector<std::vector<double>>& perSampleG,
                                                  const std::vector<std::vector<double>>& perSampleH);

/// Reverse-KL score-function estimator on forward samples.
EstimatorOutput rklGradientBatch(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                                 const ObjectiveConfig& config);
/// Forward-KL estimator on backward samples.
EstimatorOutput fklGradientBatch(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                                 const ObjectiveConfig& config);

/// Shared-parameter gradient (forward and backward models read one slice).
/// Throws WrongParamMode unless the policy is in SharedWithForward mode.
EstimatorOutput sharedParamGradient(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                                    Family family, Direction direction, const ObjectiveConfig& config);

/// Adds the gradient of the surrogate scalar to `grad` (full length).
/// Throws NonFiniteGradient.
void accumulateGradient(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                        const EstimatorOutput& estimate, std::span<double> grad);

struct SamplingContext {
  const PolicyView* view = nullptr;
  const Target* target = nullptr;
  const TerminalSampler* sampler = nullptr;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

struct StepResult {
  std::vector<WeightedTrajectory> batch;  // forward samples first, then backward
  std::size_t numForward = 0;
  EstimatorOutput estimate;
};

/// Number of backward samples in a deterministic alpha-mixture of size S.
std::size_t backwardShare(double alpha, int batchSize);

StepResult alphaTbStep(const ObjectiveConfig& config, const SamplingContext& ctx);
StepResult alphaKlStep(const ObjectiveConfig& config, const SamplingContext& ctx);
/// Dispatch on config.family.
StepResult objectiveStep(const ObjectiveConfig& config, const SamplingContext& ctx);

Diagnostics computeDiagnostics(std::span<const WeightedTrajectory> batch);

}  // namespace gfnvi
