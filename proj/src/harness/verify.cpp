#include "gfnvi/harness/verify.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "gfnvi/error.hpp"
#include "gfnvi/eval.hpp"
#include "gfnvi/logmath.hpp"

namespace gfnvi {

namespace {

TabularTarget verifyTarget(int dim, std::uint64_t seed) {
  Rng rng(seed, StreamTag::Custom, 0, 1);
  std::vector<double> m(std::size_t{1} << dim);
  for (double& v : m) v = 0.2 + 2.0 * rng.uniform();
  return TabularTarget(dim, std::move(m));
}

struct Model {
  Policy policy;
  std::vector<double> params;
};

Model makeModel(int dim, BackwardMode mode, std::uint64_t seed) {
  PolicyConfig pc;
  pc.dim = dim;
  pc.hidden = {16};
  pc.backward = mode;
  pc.initScale = 1.5;
  Model m{Policy(pc), {}};
  m.params.assign(m.policy.parameterCount(), 0.0);
  Rng rng(seed, StreamTag::Init, 0, static_cast<std::uint64_t>(mode));
  m.policy.initialize(m.params, rng);
  return m;
}

double maxAbsDiff(const std::vector<double>& a, const std::vector<double>& b, std::size_t lo, std::size_t hi,
                  double scale = 1.0) {
  double d = 0.0;
  for (std::size_t i = lo; i < hi; ++i) d = std::max(d, std::abs(a[i] - scale * b[i]));
  return d;
}

CheckResult check(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

}  // namespace

VerifyOptions verifyOptionsFromKeyValues(const KeyValues& kv) {
  VerifyOptions o;
  for (const auto& [key, value] : kv) {
    try {
      if (key == "verify.dim")
        o.dim = std::stoi(value);
      else if (key == "verify.seed")
        o.seed = std::stoull(value);
      else if (key == "verify.mc_batches")
        o.mcBatches = std::stoi(value);
      else if (key == "verify.corrupt_psi_gradient")
        o.corruptPsiGradient = std::stod(value);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "bad value '" + value + "' for " + key);
    }
  }
  if (o.dim < 1 || o.dim > kOracleMaxDim)
    throw Error(ErrorCode::ConfigError, fmt::format("verify.dim must be in [1, {}]", kOracleMaxDim));
  if (o.mcBatches < 10) throw Error(ErrorCode::ConfigError, "verify.mc_batches must be >= 10");
  return o;
}

GradientMoments monteCarloGradient(std::size_t dim, int n, const std::function<std::vector<double>(int)>& draw) {
  // Welford, so large means do not cancel the variance.
  GradientMoments m{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  std::vector<double> m2(dim, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto g = draw(k);
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = g[i] - m.mean[i];
      m.mean[i] += d / (k + 1);
      m2[i] += d * (g[i] - m.mean[i]);
    }
  }
  for (std::size_t i = 0; i < dim; ++i) {
    m.var[i] = n > 1 ? m2[i] / (n - 1) : 0.0;
    m.se[i] = std::sqrt(m.var[i] / n);
  }
  return m;
}

std::pair<double, double> coordinateAgreement(const GradientMoments& mc, const std::vector<double>& exact,
                                              std::size_t lo, std::size_t hi, double z) {
  std::size_t ok = 0;
  double worst = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    const double diff = std::abs(mc.mean[i] - exact[i]);
    const double zi = mc.se[i] > 0 ? diff / mc.se[i] : (diff < 1e-12 ? 0.0 : 1e9);
    worst = std::max(worst, zi);
    ok += zi <= z;
  }
  return {hi > lo ? static_cast<double>(ok) / static_cast<double>(hi - lo) : 1.0, worst};
}

std::vector<CheckResult> runVerification(const VerifyOptions& o) {
  std::vector<CheckResult> out;
  const int D = o.dim;
  const auto target = verifyTarget(D, o.seed);
  auto fwd = makeModel(D, BackwardMode::UniformFixed, o.seed);
  auto learned = makeModel(D, BackwardMode::LearnedDistinct, o.seed);
  const double logZ = exactLogPartition(target, fwd.params);
  fwd.params[fwd.policy.psiIndex()] = logZ;
  learned.params[learned.policy.psiIndex()] = logZ;
  const PolicyView view(fwd.policy, fwd.params);
  const PolicyView lview(learned.policy, learned.params);

  // Normalization: Q sums to one over trajectories, and for every terminal x
  // P_B(. | x) sums to one over the trajectories ending at x.
  {
    double total = kNegInf;
    std::vector<double> pb(std::size_t{1} << D, kNegInf);
    forEachTrajectory(lview, [&](const Trajectory& t) {
      total = logAddExp(total, lview.logQ(t));
      auto& slot = pb[terminalIndex(t.terminal())];
      slot = logAddExp(slot, lview.logPB(t));
    });
    double worst = std::abs(std::expm1(total));
    for (double v : pb) worst = std::max(worst, std::abs(std::expm1(v)));
    out.push_back(check("normalization", worst < 1e-12, fmt::format("max |sum - 1| = {:.3g}", worst)));
  }

  // Step distributions sum to one at every non-terminating state.
  {
    double worst = 0.0;
    for (std::uint64_t code = 0; code < static_cast<std::uint64_t>(std::pow(3, D)); ++code) {
      State s(D);
      std::uint64_t c = code;
      for (int i = 0; i < D; ++i, c /= 3)
        if (c % 3) s = s.with(i, c % 3 == 1 ? Bit::Zero : Bit::One);
      if (!s.isTerminating()) {
        double t = kNegInf;
        for (const State& ch : children(s)) t = logAddExp(t, lview.forwardStepLogProb(s, ch));
        worst = std::max(worst, std::abs(std::expm1(t)));
      }
      if (!s.isRoot()) {
        double t = kNegInf;
        for (const State& p : parents(s)) t = logAddExp(t, lview.backwardStepLogProb(p, s));
        worst = std::max(worst, std::abs(std::expm1(t)));
      }
    }
    out.push_back(check("step probabilities", worst < 1e-12, fmt::format("max |sum - 1| = {:.3g}", worst)));
  }

  // Flow conservation at every interior state.
  {
    const auto flows = exactFlows(view);
    double worst = 0.0;
    for (const auto& [s, logF] : flows.stateLogFlow) {
      if (s.isRoot() || s.isTerminating()) continue;
      double in = kNegInf, outF = kNegInf;
      for (const State& p : parents(s)) in = logAddExp(in, flows.edgeLogFlow.at({p, s}));
      for (const State& c : children(s)) outF = logAddExp(outF, flows.edgeLogFlow.at({s, c}));
      worst = std::max({worst, std::abs(in - logF), std::abs(outF - logF)});
    }
    out.push_back(check("flow conservation", worst < 1e-12, fmt::format("max log-flow mismatch = {:.3g}", worst)));
  }

  // Subset DP marginal against trajectory enumeration.
  {
    std::vector<double> byPaths(std::size_t{1} << D, kNegInf);
    forEachTrajectory(view, [&](const Trajectory& t) {
      auto& slot = byPaths[terminalIndex(t.terminal())];
      slot = logAddExp(slot, view.logQ(t));
    });
    const auto dp = exactTerminalMarginal(view);
    const double d = maxAbsDiff(dp, byPaths, 0, dp.size());
    out.push_back(check("terminal marginal", d < 1e-10, fmt::format("max |log diff| = {:.3g}", d)));
  }

  // TB gradients at psi = log Z are twice the KL gradients.
  const auto oracle = oracleExact(view, target);
  const auto loracle = oracleExact(lview, target);
  {
    const auto phi = fwd.policy.phi();
    const double dq = maxAbsDiff(oracle.tbGradQ, oracle.rklGrad, phi.offset, phi.end(), 2.0);
    out.push_back(check("phi gradient equivalence", dq < 1e-10, fmt::format("max |diff| = {:.3g}", dq)));
    const auto theta = learned.policy.theta();
    const double dp = maxAbsDiff(loracle.tbGradP, loracle.fklGrad, theta.offset, theta.end(), 2.0);
    out.push_back(check("theta gradient equivalence", dp < 1e-10, fmt::format("max |diff| = {:.3g}", dp)));
  }

  // E_Q[d L_TB / d psi] = 2 KL(Q || P) at psi = log Z, with the expectation taken
  // by enumeration and each term produced by the TB estimator.
  {
    double expected = 0.0;
    forEachTrajectory(view, [&](const Trajectory& t) {
      const auto w = view.weigh(t, target, Provenance::Enumerated);
      const std::vector<WeightedTrajectory> one{w};
      auto est = tbGradientBatch(one, view.psi());
      est.coefficients[0].psi += o.corruptPsiGradient;
      expected += std::exp(w.logQ) * est.coefficients[0].psi;
    });
    const double d = std::abs(expected - 2.0 * oracle.klQP);
    out.push_back(check("psi gradient identity", d < 1e-10,
                        fmt::format("E_Q[dL/dpsi] = {:.12g}, 2 KL = {:.12g}", expected, 2.0 * oracle.klQP)));
  }

  // Per-sample TB coefficients are twice the reverse-KL coefficients with the
  // scaling c = psi - log Z. psi is moved off log Z so the payoffs differ.
  {
    auto shifted = fwd.params;
    shifted[fwd.policy.psiIndex()] = logZ + 0.7;
    const PolicyView sview(fwd.policy, shifted);
    ObjectiveConfig cfg;
    cfg.family = Family::AlphaKL;
    cfg.cv = ControlVariate::Fixed;
    cfg.fixedC = sview.psi() - logZ;
    cfg.logZref = logZ;
    double worst = 0.0;
    for (int b = 0; b < 50; ++b) {
      std::vector<WeightedTrajectory> batch;
      for (int k = 0; k < 4; ++k) {
        Rng rng(o.seed, StreamTag::ForwardSample, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(k));
        batch.push_back(sampleForward(sview, target, rng));
      }
      const auto tb = tbGradientBatch(batch, sview.psi());
      const auto rkl = rklGradientBatch(sview, batch, cfg);
      for (std::size_t s = 0; s < batch.size(); ++s)
        worst = std::max(worst, std::abs(tb.coefficients[s].logQ - 2.0 * rkl.coefficients[s].logQ));
    }
    out.push_back(check("per-sample identity", worst < 1e-12, fmt::format("max |diff| = {:.3g}", worst)));
  }

  // Monte Carlo unbiasedness of the reverse-KL estimator for each control variate.
  {
    const auto phi = fwd.policy.phi();
    const std::vector<ControlVariate> cvs{ControlVariate::Fixed, ControlVariate::LooLogW, ControlVariate::LooLogZ,
                                          ControlVariate::LooOptimal};
    for (const auto cv : cvs) {
      ObjectiveConfig cfg;
      cfg.family = Family::AlphaKL;
      cfg.cv = cv;
      cfg.logZref = logZ;
      const int S = 8;
      const auto mc = monteCarloGradient(fwd.params.size(), o.mcBatches, [&](int k) {
        std::vector<WeightedTrajectory> batch;
        for (int s = 0; s < S; ++s) {
          Rng rng(o.seed + 1000, StreamTag::ForwardSample, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(s));
          batch.push_back(sampleForward(view, target, rng));
        }
        std::vector<double> g(fwd.params.size(), 0.0);
        accumulateGradient(view, batch, rklGradientBatch(view, batch, cfg), g);
        return g;
      });
      const auto [frac, worst] = coordinateAgreement(mc, oracle.rklGrad, phi.offset, phi.end(), 3.0);
      out.push_back(check("unbiased " + controlVariateName(cv), frac >= 0.9 && worst < 6.0,
                          fmt::format("{:.1f}% within 3 se, worst z = {:.2f}", 100 * frac, worst)));
    }
  }

  // Analytic log Q and log P_B gradients against central differences.
  {
    double worst = 0.0;
    auto params = learned.params;
    Rng rng(o.seed, StreamTag::Custom, 0, 99);
    for (int probe = 0; probe < 20; ++probe) {
      const PolicyView pv(learned.policy, params);
      const Trajectory path = pv.samplePathForward(rng);
      const auto gq = logQGradient(pv, path);
      const auto gb = logPBGradient(pv, path);
      const std::size_t i = rng.below(learned.policy.psiIndex());
      const double h = 1e-5;
      auto eval = [&](double delta) {
        auto p = params;
        p[i] += delta;
        const PolicyView v(learned.policy, p);
        return std::pair{v.logQ(path), v.logPB(path)};
      };
      const auto [qp, bp] = eval(h);
      const auto [qm, bm] = eval(-h);
      const double fq = (qp - qm) / (2 * h), fb = (bp - bm) / (2 * h);
      worst = std::max(worst, std::abs(fq - gq[i]) / std::max(1.0, std::abs(fq)));
      worst = std::max(worst, std::abs(fb - gb[i]) / std::max(1.0, std::abs(fb)));
    }
    out.push_back(check("finite differences", worst < 1e-6, fmt::format("max rel err = {:.3g}", worst)));
  }
  return out;
}

int reportVerification(const std::vector<CheckResult>& results, std::ostream& out) {
  bool ok = true;
  for (const auto& r : results) {
    out << fmt::format("{} {:<28} {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

}  // namespace gfnvi
