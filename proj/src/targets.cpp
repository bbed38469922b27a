#include "gfnvi/targets.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "gfnvi/error.hpp"
#include "gfnvi/logmath.hpp"

namespace gfnvi {

namespace {

constexpr int kMaxGridBits = 12;
constexpr int kSpiralSamplesPerArm = 2048;

void requireTerminal(const Target& target, const State& x) {
  if (x.dim() != target.dim()) throw Error(ErrorCode::DimensionMismatch, "terminal dimension");
  if (!x.isTerminating()) throw Error(ErrorCode::NotTerminating, x.toString());
}

double defaultSigma(const std::string& name) { return name == "2spirals" ? 0.15 : 0.3; }

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> massesToBytes(const std::vector<double>& masses) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(masses.size() * 8);
  for (double m : masses) {
    const auto u = std::bit_cast<std::uint64_t>(m);
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
  }
  return bytes;
}

}  // namespace

AliasTable::AliasTable(std::span<const double> weights) : prob_(weights.size()), alias_(weights.size()) {
  const std::size_t n = weights.size();
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "alias table needs at least one weight");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "alias weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) throw Error(ErrorCode::InvalidArgument, "alias weights sum to zero");
  std::vector<double> scaled(n);
  std::vector<std::size_t> small;
  std::vector<std::size_t> large;
  for (std::size_t k = 0; k < n; ++k) {
    scaled[k] = weights[k] * static_cast<double>(n) / total;
    (scaled[k] < 1.0 ? small : large).push_back(k);
  }
  while (!small.empty() && !large.empty()) {
    const std::size_t s = small.back();
    small.pop_back();
    const std::size_t l = large.back();
    prob_[s] = scaled[s];
    alias_[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (std::size_t k : large) {
    prob_[k] = 1.0;
    alias_[k] = k;
  }
  for (std::size_t k : small) {
    prob_[k] = 1.0;
    alias_[k] = k;
  }
}

std::size_t AliasTable::sample(Rng& rng) const {
  const std::size_t k = rng.below(prob_.size());
  return rng.uniform() < prob_[k] ? k : alias_[k];
}

DiscretizedDensity::DiscretizedDensity(DensityParams params, std::vector<double> masses)
    : params_(std::move(params)), masses_(std::move(masses)), alias_(masses_) {}

DiscretizedDensity DiscretizedDensity::build(DensityParams params) {
  if (params.bits < 1 || params.bits > kMaxGridBits) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("grid bits must be in [1, {}], got {}", kMaxGridBits, params.bits));
  }
  if (params.sigma <= 0.0) params.sigma = defaultSigma(params.name);
  const std::size_t side = std::size_t{1} << params.bits;
  const double cell = 2.0 * params.extent / static_cast<double>(side);
  const double inv2s2 = 1.0 / (2.0 * params.sigma * params.sigma);
  std::vector<double> masses(side * side);

  if (params.name == "8gaussians") {
    std::vector<std::pair<double, double>> centers;
    for (int k = 0; k < 8; ++k) {
      const double a = k * std::numbers::pi / 4.0;
      centers.emplace_back(2.0 * std::cos(a), 2.0 * std::sin(a));
    }
    for (std::size_t i = 0; i < side; ++i) {
      const double x = -params.extent + (static_cast<double>(i) + 0.5) * cell;
      for (std::size_t j = 0; j < side; ++j) {
        const double y = -params.extent + (static_cast<double>(j) + 0.5) * cell;
        double m = 0.0;
        for (const auto& [cx, cy] : centers) m += std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) * inv2s2);
        masses[i * side + j] = m;
      }
    }
  } else if (params.name == "2spirals") {
    // r(t) = 4 t / (3 pi), t in [0, 3 pi]; the second arm is the first rotated by pi.
    std::vector<std::pair<double, double>> arm;
    for (int k = 0; k < kSpiralSamplesPerArm; ++k) {
      const double t = 3.0 * std::numbers::pi * k / (kSpiralSamplesPerArm - 1);
      const double r = 4.0 * t / (3.0 * std::numbers::pi);
      arm.emplace_back(r * std::cos(t), r * std::sin(t));
    }
    for (std::size_t i = 0; i < side; ++i) {
      const double x = -params.extent + (static_cast<double>(i) + 0.5) * cell;
      for (std::size_t j = 0; j < side; ++j) {
        const double y = -params.extent + (static_cast<double>(j) + 0.5) * cell;
        double d1 = std::numeric_limits<double>::infinity();
        double d2 = d1;
        for (const auto& [px, py] : arm) {
          d1 = std::min(d1, (x - px) * (x - px) + (y - py) * (y - py));
          d2 = std::min(d2, (x + px) * (x + px) + (y + py) * (y + py));
        }
        masses[i * side + j] = std::exp(-d1 * inv2s2) + std::exp(-d2 * inv2s2);
      }
    }
  } else {
    throw Error(ErrorCode::UnknownDensity, "'" + params.name + "'");
  }
  for (double& m : masses) m = std::max(m, params.floor);
  return DiscretizedDensity(std::move(params), std::move(masses));
}

DiscretizedDensity DiscretizedDensity::fromMasses(DensityParams params, std::vector<double> masses) {
  if (params.bits < 1 || params.bits > kMaxGridBits) throw Error(ErrorCode::InvalidArgument, "grid bits");
  const std::size_t side = std::size_t{1} << params.bits;
  if (masses.size() != side * side) throw Error(ErrorCode::DimensionMismatch, "mass grid size");
  for (double& m : masses) {
    if (!std::isfinite(m) || m < 0.0) throw Error(ErrorCode::InvalidArgument, "masses must be finite and >= 0");
    m = std::max(m, params.floor);
  }
  return DiscretizedDensity(std::move(params), std::move(masses));
}

double DiscretizedDensity::logReward(std::span<const double>, const State& x) const {
  requireTerminal(*this, x);
  const auto [i, j] = stateToCell(x, params_.bits);
  return std::log(mass(i, j));
}

double DiscretizedDensity::logZ() const {
  double total = 0.0;
  for (double m : masses_) total += m;
  return std::log(total);
}

State DiscretizedDensity::sampleTerminal(Rng& rng) const {
  const std::size_t cell = alias_.sample(rng);
  return cellToState(cell / side(), cell % side(), params_.bits);
}

std::vector<State> sampleDataset(const DiscretizedDensity& density, std::size_t n, Rng& rng) {
  std::vector<State> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(density.sampleTerminal(rng));
  return out;
}

void exportDensity(const DiscretizedDensity& density, const std::filesystem::path& binPath,
                   const std::filesystem::path& jsonPath) {
  const auto bytes = massesToBytes(density.masses());
  {
    std::ofstream out(binPath, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + binPath.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const DensityParams& p = density.params();
  nlohmann::json j{{"name", p.name},
                   {"bits", p.bits},
                   {"sigma", p.sigma},
                   {"extent", p.extent},
                   {"floor", p.floor},
                   {"cells", density.masses().size()},
                   {"data", binPath.filename().string()},
                   {"checksum", fmt::format("fnv1a64:{:016x}", fnv1a(bytes))}};
  std::ofstream out(jsonPath, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + jsonPath.string());
  out << j.dump(2) << "\n";
}

DiscretizedDensity importDensity(const std::filesystem::path& jsonPath) {
  std::ifstream in(jsonPath);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + jsonPath.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("bad density sidecar: ") + e.what());
  }
  DensityParams p;
  p.name = j.at("name").get<std::string>();
  p.bits = j.at("bits").get<int>();
  p.sigma = j.at("sigma").get<double>();
  p.extent = j.at("extent").get<double>();
  p.floor = j.at("floor").get<double>();
  const auto binPath = jsonPath.parent_path() / j.at("data").get<std::string>();
  std::ifstream bin(binPath, std::ios::binary);
  if (!bin) throw Error(ErrorCode::IoError, "cannot read " + binPath.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (fmt::format("fnv1a64:{:016x}", fnv1a(bytes)) != j.at("checksum").get<std::string>()) {
    throw Error(ErrorCode::IoError, "density checksum mismatch for " + binPath.string());
  }
  if (bytes.size() % 8 != 0) throw Error(ErrorCode::IoError, "density file length is not a multiple of 8");
  std::vector<double> masses(bytes.size() / 8);
  for (std::size_t k = 0; k < masses.size(); ++k) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[8 * k + b]) << (8 * b);
    masses[k] = std::bit_cast<double>(u);
  }
  return DiscretizedDensity::fromMasses(std::move(p), std::move(masses));
}

TabularTarget::TabularTarget(int dim, std::vector<double> masses) : dim_(dim), masses_(std::move(masses)) {
  if (dim < 1 || dim > kMaxEnumerationDim) throw Error(ErrorCode::StateSpaceTooLarge, "tabular dimension");
  if (masses_.size() != (std::size_t{1} << dim)) throw Error(ErrorCode::DimensionMismatch, "need 2^D masses");
  for (double& m : masses_) {
    if (!std::isfinite(m) || m < 0.0) throw Error(ErrorCode::InvalidArgument, "masses must be finite and >= 0");
    m = std::max(m, kRewardFloor);
  }
}

double TabularTarget::logReward(std::span<const double>, const State& x) const {
  requireTerminal(*this, x);
  return std::log(masses_[terminalIndex(x)]);
}

IsingTarget::IsingTarget(int side, double beta) : side_(side), beta_(beta) {
  if (side < 3 || side > 8) throw Error(ErrorCode::InvalidArgument, "Ising grid side must be in [3, 8]");
  const int d = side * side;
  adjacency_.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int k = r * side + c;
      const int right = r * side + (c + 1) % side;
      const int down = ((r + 1) % side) * side + c;
      for (int n : {right, down}) {
        adjacency_[static_cast<std::size_t>(k) * d + n] = 1.0;
        adjacency_[static_cast<std::size_t>(n) * d + k] = 1.0;
      }
    }
  }
}

double IsingTarget::energy(const State& x) const {
  requireTerminal(*this, x);
  const NumericState s = toNumeric(x);
  const int d = dim();
  double quad = 0.0;
  for (int i = 0; i < d; ++i) {
    double row = 0.0;
    for (int j = 0; j < d; ++j) row += adjacency_[static_cast<std::size_t>(i) * d + j] * s[j];
    quad += s[i] * row;
  }
  return -0.5 * quad;
}

double IsingTarget::logReward(std::span<const double>, const State& x) const { return -beta_ * energy(x); }

EnergyTarget::EnergyTarget(MlpSpec spec, Slice xi) : net_(std::move(spec)), xi_(xi) {
  if (net_.spec().outputDim != 1) throw Error(ErrorCode::InvalidArgument, "energy net must have one output");
  if (net_.parameterCount() != xi_.size) throw Error(ErrorCode::DimensionMismatch, "energy slice size");
}

double EnergyTarget::energy(std::span<const double> params, const State& x) const {
  requireTerminal(*this, x);
  return net_.forward(params.subspan(xi_.offset, xi_.size), toNumeric(x))[0];
}

double EnergyTarget::logReward(std::span<const double> params, const State& x) const {
  return -energy(params, x);
}

void EnergyTarget::accumulateEnergyGradient(std::span<const double> params, const State& x, double coef,
                                            std::span<double> grad) const {
  requireTerminal(*this, x);
  const double upstream[1] = {coef};
  net_.backward(params.subspan(xi_.offset, xi_.size), toNumeric(x), upstream,
                grad.subspan(xi_.offset, xi_.size));
}

DatasetSampler::DatasetSampler(std::vector<State> data) : data_(std::move(data)) {
  if (data_.empty()) throw Error(ErrorCode::NoTerminalSamplerAvailable, "empty dataset");
}

std::vector<double> terminalLogRewards(const Target& target, std::span<const double> params) {
  const int dim = target.dim();
  if (dim > kMaxEnumerationDim) {
    throw Error(ErrorCode::StateSpaceTooLarge, fmt::format("cannot enumerate 2^{} terminals", dim));
  }
  const std::size_t n = std::size_t{1} << dim;
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = target.logReward(params, terminalFromIndex(k, dim));
  return out;
}

double exactLogPartition(const Target& target, std::span<const double> params) {
  const auto logR = terminalLogRewards(target, params);
  return logSumExp(logR);
}

namespace {

std::vector<double> normalizedWeights(const Target& target, std::span<const double> params) {
  auto logR = terminalLogRewards(target, params);
  const double lz = logSumExp(logR);
  for (double& v : logR) v = std::exp(v - lz);
  return logR;
}

}  // namespace

ExactSampler::ExactSampler(const Target& target, std::span<const double> params)
    : dim_(target.dim()), alias_(normalizedWeights(target, params)) {}

State ExactSampler::sample(Rng& rng) const { return terminalFromIndex(alias_.sample(rng), dim_); }

MhResult mhBackForthKernel(const PolicyView& view, const Target& target, const State& x, int kBack, Rng& rng) {
  requireTerminal(target, x);
  if (kBack < 1 || kBack > x.dim()) throw Error(ErrorCode::InvalidArgument, "back-and-forth depth out of range");

  // x -> z through P_B, then z -> x' through P_F.
  std::vector<State> down{x};
  double logBackward = 0.0;   // P_B(x -> z)
  double logReturnFwd = 0.0;  // P_F(z -> x) along the reversed removal path
  for (int k = 0; k < kBack; ++k) {
    State parent = view.sampleBackwardStep(down.back(), rng);
    logBackward += view.backwardStepLogProb(parent, down.back());
    logReturnFwd += view.forwardStepLogProb(parent, down.back());
    down.push_back(std::move(parent));
  }
  State cur = down.back();
  double logForward = 0.0;     // P_F(z -> x')
  double logReturnBack = 0.0;  // P_B(x' -> z) along the reversed rebuild path
  for (int k = 0; k < kBack; ++k) {
    State child = view.sampleForwardStep(cur, rng);
    logForward += view.forwardStepLogProb(cur, child);
    logReturnBack += view.backwardStepLogProb(cur, child);
    cur = std::move(child);
  }
  const auto params = view.params();
  const double logRatio = target.logReward(params, cur) + logReturnBack + logReturnFwd -
                          target.logReward(params, x) - logBackward - logForward;
  MhResult result{x, std::min(0.0, logRatio), false};
  if (std::isnan(logRatio)) return result;
  if (logRatio >= 0.0 || std::log(rng.uniform()) < logRatio) {
    result.state = cur;
    result.accepted = true;
  }
  return result;
}

ChainResult runMhChain(const PolicyView& view, const Target& target, const State& start, int steps, int kBack,
                       Rng& rng) {
  ChainResult chain{start, 0};
  for (int k = 0; k < steps; ++k) {
    MhResult r = mhBackForthKernel(view, target, chain.state, kBack, rng);
    chain.accepted += r.accepted ? 1 : 0;
    chain.state = std::move(r.state);
  }
  return chain;
}

CdResult cdGradientStep(const PolicyView& view, const EnergyTarget& energy, std::span<const State> data,
                        int chainSteps, int kBack, std::uint64_t seed, std::uint64_t step) {
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "contrastive divergence needs data");
  const auto params = view.params();
  CdResult result;
  result.gradient.assign(params.size(), 0.0);
  const double w = 1.0 / static_cast<double>(data.size());
  long accepted = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    Rng rng(seed, StreamTag::Mcmc, step, k);
    const ChainResult chain = runMhChain(view, energy, data[k], chainSteps, kBack, rng);
    accepted += chain.accepted;
    energy.accumulateEnergyGradient(params, data[k], w, result.gradient);
    energy.accumulateEnergyGradient(params, chain.state, -w, result.gradient);
  }
  const long proposals = static_cast<long>(data.size()) * chainSteps;
  result.acceptRate = proposals > 0 ? static_cast<double>(accepted) / static_cast<double>(proposals) : 0.0;
  return result;
}

}  // namespace gfnvi
