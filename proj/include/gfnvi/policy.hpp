#pragma once

// Forward and backward transition models over the bit-append DAG.
//
// Forward: pick an Unset position uniformly, then a bit value from a softmax
// over the pair of logits the network assigns to that position. Backward:
// pick a set position uniformly (UniformFixed) or from a softmax over learned
// removal scores.

#include <cstddef>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "gfnvi/checkpoint.hpp"
#include "gfnvi/nnet.hpp"
#include "gfnvi/rng.hpp"
#include "gfnvi/statespace.hpp"
#include "gfnvi/target.hpp"

namespace gfnvi {

enum class BackwardMode { UniformFixed, LearnedDistinct, SharedWithForward };

/// Where the forward logits are read from. CurrentState evaluates the net on
/// the parent state and selects the logit pair of the added position.
/// ChildState evaluates the net on the child and on the child with the added
/// bit flipped.
enum class LogitInput { CurrentState, ChildState };

BackwardMode parseBackwardMode(const std::string& name);
std::string backwardModeName(BackwardMode mode);

struct PolicyConfig {
  int dim = 1;
  std::vector<int> hidden{256, 256};
  Activation activation = Activation::Tanh;
  double initScale = 1.0;
  BackwardMode backward = BackwardMode::UniformFixed;
  LogitInput logitInput = LogitInput::CurrentState;
};

struct Trajectory {
  std::vector<State> states;      // s_0 (root) ... s_T (terminating)
  std::vector<double> stepLogPF;  // log P_F(s_{t+1} | s_t)
  std::vector<double> stepLogPB;  // log P_B(s_t | s_{t+1})

  const State& terminal() const { return states.back(); }
  double logQ() const;
  double logPB() const;
};

enum class Provenance { Forward, Backward, Enumerated };

struct WeightedTrajectory {
  Trajectory path;
  double logQ = 0.0;
  double logPB = 0.0;
  double logR = 0.0;
  Provenance provenance = Provenance::Forward;

  /// log(Z w) = log R + log P_B - log Q; the unknown normalizer is not subtracted.
  double logWeight() const { return logR + logPB - logQ; }
  const State& terminal() const { return path.terminal(); }
};

class Policy {
 public:
  explicit Policy(PolicyConfig config);

  const PolicyConfig& config() const { return config_; }
  int dim() const { return config_.dim; }
  BackwardMode backwardMode() const { return config_.backward; }

  const Mlp& forwardNet() const { return forwardNet_; }
  const Mlp* backwardNet() const { return backwardNet_ ? &*backwardNet_ : nullptr; }

  const Slice& phi() const { return phi_; }
  const Slice& theta() const { return theta_; }
  std::size_t psiIndex() const { return psiIndex_; }
  /// phi + theta + psi; an energy slice, if any, starts here.
  std::size_t parameterCount() const { return psiIndex_ + 1; }
  std::vector<NamedSpec> netSpecs() const;

  /// Glorot-uniform network weights, psi = 0.
  void initialize(std::span<double> params, Rng& rng) const;

 private:
  PolicyConfig config_;
  Mlp forwardNet_;
  std::optional<Mlp> backwardNet_;
  Slice phi_;
  Slice theta_;
  std::size_t psiIndex_ = 0;
};

/// Read-only evaluation of a policy against one parameter snapshot. Network
/// outputs are memoized per state, so a view must not outlive a change to the
/// parameters it was built from. Not safe for concurrent use; give each worker
/// its own view.
class PolicyView {
 public:
  PolicyView(const Policy& policy, std::span<const double> params);

  const Policy& policy() const { return *policy_; }
  std::span<const double> params() const { return params_; }
  double psi() const { return params_[policy_->psiIndex()]; }
  int dim() const { return policy_->dim(); }

  const std::vector<double>& forwardOutputs(const State& s) const;
  /// Outputs of the network that scores removals (the shared net in shared mode).
  const std::vector<double>& backwardOutputs(const State& s) const;

  /// The two raw logits compared when `child` is reached from `s`: the added
  /// bit's logit first, the flipped alternative second.
  std::pair<double, double> forwardLogitPair(const State& s, const State& child) const;

  double forwardStepLogProb(const State& s, const State& child) const;
  double backwardStepLogProb(const State& parent, const State& s) const;

  double logQ(const Trajectory& path) const;
  double logPB(const Trajectory& path) const;
  /// log F(tau) = log Z_psi + log Q(tau).
  double trajectoryFlow(const Trajectory& path) const { return psi() + logQ(path); }

  /// One ancestral step from P_F. `s` must not be terminating.
  State sampleForwardStep(const State& s, Rng& rng) const;
  /// One step of P_B (removes a set bit). `s` must not be the root.
  State sampleBackwardStep(const State& s, Rng& rng) const;

  /// Builds a trajectory root -> terminal ancestrally from P_F.
  Trajectory samplePathForward(Rng& rng) const;
  /// Unbuilds `x` to the root through P_B. Returned states run root -> x.
  Trajectory sampleBackwardFrom(const State& x, Rng& rng) const;
  /// Assembles a trajectory from an explicit state sequence, evaluating both
  /// step log-probabilities.
  Trajectory evaluatePath(std::vector<State> states) const;

  WeightedTrajectory weigh(Trajectory path, const Target& target, Provenance provenance) const;

  /// Output index holding the removal score of `position` when it carries `value`.
  int removalIndex(int position, Bit value) const;

 private:
  const Policy* policy_;
  std::span<const double> params_;
  mutable std::unordered_map<State, std::vector<double>> forwardCache_;
  mutable std::unordered_map<State, std::vector<double>> backwardCache_;
};

WeightedTrajectory sampleForward(const PolicyView& view, const Target& target, Rng& rng);

/// Terminal drawn from `sampler`, then unbuilt through P_B. Terminals with zero
/// reward are redrawn. Throws NoTerminalSamplerAvailable when `sampler` is null.
WeightedTrajectory sampleBackward(const PolicyView& view, const Target& target,
                                  const TerminalSampler* sampler, Rng& rng);

/// Accumulates gradients of weighted sums of trajectory log-probabilities,
///   sum_k a_k log Q(tau_k) + b_k log P_B(tau_k),
/// with one network backward pass per distinct visited state.
class ScoreAccumulator {
 public:
  explicit ScoreAccumulator(const PolicyView& view);

  void addLogQ(const Trajectory& path, double coef);
  void addLogPB(const Trajectory& path, double coef);
  void addForwardStep(const State& s, const State& child, double coef);
  void addBackwardStep(const State& parent, const State& s, double coef);

  /// Adds the accumulated gradient into `grad` (full parameter length) and resets.
  void flush(std::span<double> grad);

 private:
  std::vector<double>& slot(std::unordered_map<State, std::vector<double>>& map, const State& s,
                            std::size_t width);

  const PolicyView* view_;
  std::unordered_map<State, std::vector<double>> forwardUpstream_;
  std::unordered_map<State, std::vector<double>> backwardUpstream_;
};

/// d log Q(tau) / d params and d log P_B(tau) / d params as full-length vectors.
std::vector<double> logQGradient(const PolicyView& view, const Trajectory& path);
std::vector<double> logPBGradient(const PolicyView& view, const Trajectory& path);

}  // namespace gfnvi
