#include "gfnvi/eval.hpp"

#include <cmath>
#include <limits>

#include "gfnvi/error.hpp"
#include "gfnvi/logmath.hpp"

namespace gfnvi {

namespace {

void requireDim(int dim, int cap, const char* what) {
  if (dim > cap)
    throw Error(ErrorCode::StateSpaceTooLarge, std::string(what) + " supports D <= " + std::to_string(cap));
}

void accumulateLog(std::unordered_map<State, double>& map, const State& s, double logValue) {
  auto [it, inserted] = map.try_emplace(s, logValue);
  if (!inserted) it->second = logAddExp(it->second, logValue);
}

struct Enumerated {
  Trajectory path;
  double logQ;
  double logPB;
  double logR;
};

}  // namespace

double isMarginalLogLikelihood(const PolicyView& view, const State& x, int numSamples, Rng& rng) {
  if (!x.isTerminating()) throw Error(ErrorCode::NotTerminating, "IS likelihood needs a terminating state");
  if (numSamples < 1) throw Error(ErrorCode::InvalidArgument, "IS likelihood needs N >= 1");
  std::vector<double> logw(static_cast<std::size_t>(numSamples));
  for (auto& v : logw) {
    const Trajectory path = view.sampleBackwardFrom(x, rng);
    v = path.logQ() - path.logPB();
  }
  return logSumExp(logw) - std::log(static_cast<double>(numSamples));
}

double testNll(const PolicyView& view, std::span<const State> data, int numSamples, std::uint64_t seed,
               std::uint64_t step) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng(seed, StreamTag::Evaluation, step, i);
    total -= isMarginalLogLikelihood(view, data[i], numSamples, rng);
  }
  return total / static_cast<double>(data.size());
}

MeanWithError expectedLogWeight(const PolicyView& view, const Target& target, int numSamples,
                                std::uint64_t seed, std::uint64_t step) {
  MeanWithError out;
  if (numSamples < 1) return out;
  std::vector<double> lw(static_cast<std::size_t>(numSamples));
  for (std::size_t i = 0; i < lw.size(); ++i) {
    Rng rng(seed, StreamTag::Evaluation, step, i);
    lw[i] = sampleForward(view, target, rng).logWeight();
  }
  double mean = 0.0;
  for (double v : lw) mean += v;
  mean /= static_cast<double>(lw.size());
  double ss = 0.0;
  for (double v : lw) ss += (v - mean) * (v - mean);
  out.mean = mean;
  if (lw.size() > 1) out.stdError = std::sqrt(ss / static_cast<double>(lw.size() - 1) / static_cast<double>(lw.size()));
  return out;
}

std::vector<double> exactTerminalMarginal(const PolicyView& view) {
  const int D = view.dim();
  requireDim(D, kMarginalMaxDim, "terminal marginal DP");
  std::unordered_map<State, double> level{{State(D), 0.0}};
  for (int k = 0; k < D; ++k) {
    std::unordered_map<State, double> next;
    next.reserve(level.size() * 2);
    for (const auto& [s, logq] : level)
      for (const State& c : children(s)) accumulateLog(next, c, logq + view.forwardStepLogProb(s, c));
    level = std::move(next);
  }
  std::vector<double> out(std::size_t{1} << D, kNegInf);
  for (const auto& [x, logq] : level) out[terminalIndex(x)] = logq;
  return out;
}

void forEachTrajectory(const PolicyView& view, const std::function<void(const Trajectory&)>& visit) {
  const int D = view.dim();
  requireDim(D, kOracleMaxDim, "trajectory enumeration");
  Trajectory path;
  path.states.push_back(State(D));
  std::function<void()> recurse = [&]() {
    const State s = path.states.back();
    if (s.isTerminating()) {
      visit(path);
      return;
    }
    for (const State& c : children(s)) {
      path.stepLogPF.push_back(view.forwardStepLogProb(s, c));
      path.stepLogPB.push_back(view.backwardStepLogProb(s, c));
      path.states.push_back(c);
      recurse();
      path.states.pop_back();
      path.stepLogPF.pop_back();
      path.stepLogPB.pop_back();
    }
  };
  recurse();
}

OracleResult oracleExact(const PolicyView& view, const Target& target, bool withGradients) {
  const int D = view.dim();
  requireDim(D, kOracleMaxDim, "oracle");
  if (target.dim() != D) throw Error(ErrorCode::DimensionMismatch, "target and policy dimensions differ");

  OracleResult out;
  const std::size_t numTerminals = std::size_t{1} << D;
  std::vector<double> logR(numTerminals);
  for (std::size_t i = 0; i < numTerminals; ++i) logR[i] = target.logReward(view.params(), terminalFromIndex(i, D));
  out.logZ = logSumExp(logR);
  out.Z = std::exp(out.logZ);

  std::vector<Enumerated> all;
  forEachTrajectory(view, [&](const Trajectory& path) {
    all.push_back({path, path.logQ(), path.logPB(), logR[terminalIndex(path.terminal())]});
  });

  std::vector<double> logQT(numTerminals, kNegInf);
  for (const auto& e : all) {
    const std::size_t x = terminalIndex(e.path.terminal());
    logQT[x] = logAddExp(logQT[x], e.logQ);
    const double logP = e.logR + e.logPB - out.logZ;
    const double q = std::exp(e.logQ);
    const double p = std::exp(logP);
    if (q > 0.0) out.klQP += q * (e.logQ - logP);
    if (p > 0.0) out.klPQ += p * (logP - e.logQ);
  }
  for (std::size_t i = 0; i < numTerminals; ++i)
    out.tv += 0.5 * std::abs(std::exp(logQT[i]) - std::exp(logR[i] - out.logZ));

  if (!withGradients) return out;

  const std::size_t P = view.params().size();
  const std::size_t psiIdx = view.policy().psiIndex();
  const double psi = view.psi();
  out.tbGradQ.assign(P, 0.0);
  out.tbGradP.assign(P, 0.0);
  out.rklGrad.assign(P, 0.0);
  out.fklGrad.assign(P, 0.0);
  ScoreAccumulator accTbQ(view), accTbP(view), accRkl(view), accFkl(view);
  for (const auto& e : all) {
    const double logP = e.logR + e.logPB - out.logZ;
    const double q = std::exp(e.logQ);
    const double p = std::exp(logP);
    const double delta = psi + e.logQ - e.logR - e.logPB;
    if (q > 0.0) {
      accTbQ.addLogQ(e.path, q * 2.0 * delta);
      accTbQ.addLogPB(e.path, -q * 2.0 * delta);
      out.tbGradQ[psiIdx] += q * 2.0 * delta;
      accRkl.addLogQ(e.path, q * (e.logQ - logP + 1.0));
      accRkl.addLogPB(e.path, -q);
    }
    if (p > 0.0) {
      accTbP.addLogQ(e.path, p * 2.0 * delta);
      accTbP.addLogPB(e.path, -p * 2.0 * delta);
      out.tbGradP[psiIdx] += p * 2.0 * delta;
      accFkl.addLogQ(e.path, -p);
      accFkl.addLogPB(e.path, p * (logP - e.logQ + 1.0));
    }
  }
  accTbQ.flush(out.tbGradQ);
  accTbP.flush(out.tbGradP);
  accRkl.flush(out.rklGrad);
  accFkl.flush(out.fklGrad);
  return out;
}

ExactFlows exactFlows(const PolicyView& view) {
  ExactFlows flows;
  const double psi = view.psi();
  forEachTrajectory(view, [&](const Trajectory& path) {
    const double logF = psi + path.logQ();
    for (std::size_t t = 0; t < path.states.size(); ++t) {
      accumulateLog(flows.stateLogFlow, path.states[t], logF);
      if (t + 1 < path.states.size()) {
        auto key = std::make_pair(path.states[t], path.states[t + 1]);
        auto [it, inserted] = flows.edgeLogFlow.try_emplace(key, logF);
        if (!inserted) it->second = logAddExp(it->second, logF);
      }
    }
    accumulateLog(flows.terminalLogFlow, path.terminal(), logF);
  });
  return flows;
}

void MetricRow::set(const std::string& name, double value) {
  for (auto& [k, v] : values) {
    if (k == name) {
      v = value;
      return;
    }
  }
  values.emplace_back(name, value);
}

double MetricRow::get(const std::string& name) const {
  for (const auto& [k, v] : values)
    if (k == name) return v;
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace gfnvi
