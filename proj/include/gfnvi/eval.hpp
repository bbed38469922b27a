#pragma once

// Evaluation metrics and the exhaustive-enumeration oracle for small D.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gfnvi/policy.hpp"
#include "gfnvi/target.hpp"

namespace gfnvi {

/// Largest D for trajectory enumeration (D! 2^D paths).
inline constexpr int kOracleMaxDim = 6;
/// Largest D for the subset DP over all 3^D states.
inline constexpr int kMarginalMaxDim = 12;

struct MeanWithError {
  double mean = 0.0;
  double stdError = 0.0;
};

/// log of (1/N) sum_i Q(tau_i) / P_B(tau_i | x), tau_i ~ P_B(. | x).
/// Unbiased for Q_T(x) before the log. Throws NotTerminating.
double isMarginalLogLikelihood(const PolicyView& view, const State& x, int numSamples, Rng& rng);

/// Mean of -isMarginalLogLikelihood over `data`. Sample i uses the stream
/// (seed, Evaluation, step, i).
double testNll(const PolicyView& view, std::span<const State> data, int numSamples, std::uint64_t seed,
               std::uint64_t step);

/// Monte Carlo E_Q[log w~] with its standard error. Sample i uses the stream
/// (seed, Evaluation, step, i).
MeanWithError expectedLogWeight(const PolicyView& view, const Target& target, int numSamples,
                                std::uint64_t seed, std::uint64_t step);

/// log Q_T(x) for every terminal, indexed by terminalIndex. Subset DP.
/// Throws StateSpaceTooLarge above kMarginalMaxDim.
std::vector<double> exactTerminalMarginal(const PolicyView& view);

/// Visits every complete trajectory root -> terminal, in canonical child order.
/// Throws StateSpaceTooLarge above kOracleMaxDim.
void forEachTrajectory(const PolicyView& view, const std::function<void(const Trajectory&)>& visit);

struct OracleResult {
  double Z = 0.0;
  double logZ = 0.0;
  double klQP = 0.0;  // KL(Q || P)
  double klPQ = 0.0;  // KL(P || Q)
  double tv = 0.0;    // TV(Q_T, pi_T)
  // Full-length gradients (phi | theta | psi | rest).
  std::vector<double> tbGradQ;  // E_{tau~Q}[grad L_TB]
  std::vector<double> tbGradP;  // E_{tau~P}[grad L_TB]
  std::vector<double> rklGrad;  // grad KL(Q || P)
  std::vector<double> fklGrad;  // grad KL(P || Q)
};

OracleResult oracleExact(const PolicyView& view, const Target& target, bool withGradients = true);

struct ExactFlows {
  std::unordered_map<State, double> stateLogFlow;
  std::map<std::pair<State, State>, double> edgeLogFlow;
  /// log F(x -> s_f) for each terminating x.
  std::unordered_map<State, double> terminalLogFlow;
};

/// F(tau) = Z_psi Q(tau) summed over trajectory sets.
ExactFlows exactFlows(const PolicyView& view);

/// One evaluation row: named values in insertion order.
struct MetricRow {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  double wallMs = 0.0;
  std::vector<std::pair<std::string, double>> values;

  void set(const std::string& name, double value);
  /// NaN when absent.
  double get(const std::string& name) const;
};

class MetricReport {
 public:
  void append(MetricRow row) { rows_.push_back(std::move(row)); }
  const std::vector<MetricRow>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace gfnvi
