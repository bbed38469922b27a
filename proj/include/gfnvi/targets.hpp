#pragma once

// Reward models: discretized 2D densities, tabular rewards, Ising models and a
// learned energy. Also the GFN-driven Metropolis-Hastings kernel and the
// contrastive-divergence gradient for the energy.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gfnvi/nnet.hpp"
#include "gfnvi/policy.hpp"
#include "gfnvi/target.hpp"

namespace gfnvi {

inline constexpr double kRewardFloor = 1e-30;

/// Walker/Vose alias table over non-negative weights.
class AliasTable {
 public:
  explicit AliasTable(std::span<const double> weights);

  std::size_t sample(Rng& rng) const;
  std::size_t size() const { return prob_.size(); }

 private:
  std::vector<double> prob_;
  std::vector<std::size_t> alias_;
};

struct DensityParams {
  std::string name = "8gaussians";  // 8gaussians | 2spirals | custom
  int bits = 4;                     // grid cells per axis = 2^bits
  double sigma = 0.0;               // <= 0 selects the per-density default
  double extent = 4.0;              // grid covers [-extent, extent]^2
  double floor = kRewardFloor;
};

/// Unnormalized masses on a 2^B x 2^B grid; cell (i, j) maps to the terminal
/// state cellToState(i, j, B). i indexes the x axis.
class DiscretizedDensity : public Target {
 public:
  /// Builds 8gaussians or 2spirals from cell-center density values.
  static DiscretizedDensity build(DensityParams params);
  /// Grid from explicit row-major masses (index i * side + j), floored.
  static DiscretizedDensity fromMasses(DensityParams params, std::vector<double> masses);

  int dim() const override { return 2 * params_.bits; }
  std::string kind() const override { return "density:" + params_.name; }
  double logReward(std::span<const double> params, const State& x) const override;

  const DensityParams& params() const { return params_; }
  std::size_t side() const { return std::size_t{1} << params_.bits; }
  double mass(std::size_t i, std::size_t j) const { return masses_[i * side() + j]; }
  const std::vector<double>& masses() const { return masses_; }
  double logZ() const;
  State sampleTerminal(Rng& rng) const;

 private:
  DiscretizedDensity(DensityParams params, std::vector<double> masses);

  DensityParams params_;
  std::vector<double> masses_;
  AliasTable alias_;
};

/// i.i.d. terminal states drawn proportionally to the grid masses.
std::vector<State> sampleDataset(const DiscretizedDensity& density, std::size_t n, Rng& rng);

void exportDensity(const DiscretizedDensity& density, const std::filesystem::path& binPath,
                   const std::filesystem::path& jsonPath);
DiscretizedDensity importDensity(const std::filesystem::path& jsonPath);

/// Arbitrary positive masses over all 2^D terminals, indexed by terminalIndex.
class TabularTarget : public Target {
 public:
  TabularTarget(int dim, std::vector<double> masses);

  int dim() const override { return dim_; }
  std::string kind() const override { return "tabular"; }
  double logReward(std::span<const double> params, const State& x) const override;
  const std::vector<double>& masses() const { return masses_; }

 private:
  int dim_;
  std::vector<double> masses_;
};

/// pi(s) ~ exp(-beta H(s)), H(s) = -1/2 s^T A s on an N x N periodic grid.
class IsingTarget : public Target {
 public:
  IsingTarget(int side, double beta);

  int dim() const override { return side_ * side_; }
  std::string kind() const override { return "ising"; }
  double logReward(std::span<const double> params, const State& x) const override;

  int side() const { return side_; }
  double beta() const { return beta_; }
  /// Dense D x D adjacency, row-major.
  const std::vector<double>& adjacency() const { return adjacency_; }
  double energy(const State& x) const;

 private:
  int side_;
  double beta_;
  std::vector<double> adjacency_;
};

/// Learned energy xi over the +-1 terminal representation; R = exp(-xi).
class EnergyTarget : public Target {
 public:
  EnergyTarget(MlpSpec spec, Slice xi);

  int dim() const override { return net_.spec().inputDim; }
  std::string kind() const override { return "ebm"; }
  double logReward(std::span<const double> params, const State& x) const override;

  const Mlp& net() const { return net_; }
  const Slice& slice() const { return xi_; }
  double energy(std::span<const double> params, const State& x) const;
  /// Adds coef * d xi(x) / d params into the xi slice of `grad` (full length).
  void accumulateEnergyGradient(std::span<const double> params, const State& x, double coef,
                                std::span<double> grad) const;

 private:
  Mlp net_;
  Slice xi_;
};

class DensitySampler : public TerminalSampler {
 public:
  explicit DensitySampler(const DiscretizedDensity& density) : density_(&density) {}
  State sample(Rng& rng) const override { return density_->sampleTerminal(rng); }

 private:
  const DiscretizedDensity* density_;
};

/// Uniform draws from a fixed set of terminals.
class DatasetSampler : public TerminalSampler {
 public:
  explicit DatasetSampler(std::vector<State> data);
  State sample(Rng& rng) const override { return data_[rng.below(data_.size())]; }
  const std::vector<State>& data() const { return data_; }

 private:
  std::vector<State> data_;
};

/// Exact draws from R / Z by enumerating all 2^D terminals.
class ExactSampler : public TerminalSampler {
 public:
  ExactSampler(const Target& target, std::span<const double> params);
  State sample(Rng& rng) const override;

 private:
  int dim_;
  AliasTable alias_;
};

inline constexpr int kMaxEnumerationDim = 24;

/// log R for every terminal, indexed by terminalIndex. Throws StateSpaceTooLarge.
std::vector<double> terminalLogRewards(const Target& target, std::span<const double> params);
double exactLogPartition(const Target& target, std::span<const double> params);

struct MhResult {
  State state;
  double logAcceptProb = 0.0;
  bool accepted = false;
};

/// Back-and-forth proposal: remove kBack bits through P_B, rebuild through
/// P_F, accept with the path-space Metropolis-Hastings ratio.
MhResult mhBackForthKernel(const PolicyView& view, const Target& target, const State& x, int kBack,
                           Rng& rng);

struct ChainResult {
  State state;
  int accepted = 0;
};

ChainResult runMhChain(const PolicyView& view, const Target& target, const State& start, int steps,
                       int kBack, Rng& rng);

inline int defaultBackDepth(int dim) { return (dim + 1) / 2; }

struct CdResult {
  std::vector<double> gradient;  // full parameter length, nonzero on xi only
  double acceptRate = 0.0;
};

/// (1/n) sum_x [grad xi(x) - grad xi(x'_K)], x'_K from K kernel applications
/// started at x. Chain k uses the stream (seed, Mcmc, step, k).
CdResult cdGradientStep(const PolicyView& view, const EnergyTarget& energy, std::span<const State> data,
                        int chainSteps, int kBack, std::uint64_t seed, std::uint64_t step);

}  // namespace gfnvi
