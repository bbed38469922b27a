#pragma once

#include <span>
#include <string>

#include "gfnvi/rng.hpp"
#include "gfnvi/statespace.hpp"

namespace gfnvi {

/// Unnormalized reward over terminating states.
class Target {
 public:
  virtual ~Target() = default;

  virtual int dim() const = 0;
  virtual std::string kind() const = 0;

  /// log R(x) for a terminating x. `params` is the full parameter vector; only
  /// learned energies read it. Throws NotTerminating.
  virtual double logReward(std::span<const double> params, const State& x) const = 0;
};

/// Source of terminating states used to start backward trajectories.
class TerminalSampler {
 public:
  virtual ~TerminalSampler() = default;
  virtual State sample(Rng& rng) const = 0;
};

}  // namespace gfnvi
