#include <doctest.h>

#include <cmath>

#include "gfnvi/error.hpp"
#include "gfnvi/eval.hpp"
#include "gfnvi/logmath.hpp"
#include "gfnvi/objectives.hpp"
#include "helpers.hpp"

using namespace gfnvi;
using testutil::makeModel;

namespace {

constexpr Bit U = Bit::Unset;
constexpr Bit Z = Bit::Zero;
constexpr Bit O = Bit::One;

// D=1 linear policy with P_F(One | root) = pOne.
testutil::Model toyPolicy(double pOne, double psi) {
  auto m = makeModel(1, {}, BackwardMode::UniformFixed, 0);
  m.params[2] = 0.0;                        // Zero bias
  m.params[3] = std::log(pOne / (1 - pOne));  // One bias
  m.params[m.policy.psiIndex()] = psi;
  return m;
}

struct Moments {
  std::vector<double> mean;
  std::vector<double> se;
};

// Mean and standard error of per-batch gradient vectors produced by `draw`.
template <class F>
Moments monteCarlo(std::size_t dim, int n, F draw) {
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto g = draw(k);
    for (std::size_t i = 0; i < dim; ++i) {
      sum[i] += g[i];
      sq[i] += g[i] * g[i];
    }
  }
  Moments m{std::vector<double>(dim), std::vector<double>(dim)};
  for (std::size_t i = 0; i < dim; ++i) {
    m.mean[i] = sum[i] / n;
    const double var = std::max(0.0, sq[i] / n - m.mean[i] * m.mean[i]) * n / (n - 1.0);
    m.se[i] = std::sqrt(var / n);
  }
  return m;
}

// Fraction of coordinates in [lo, hi) within `z` standard errors, and the worst z.
std::pair<double, double> agreement(const Moments& mc, const std::vector<double>& exact, std::size_t lo, std::size_t hi,
                                    double z) {
  std::size_t ok = 0;
  double worst = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    const double diff = std::abs(mc.mean[i] - exact[i]);
    const double zi = mc.se[i] > 0 ? diff / mc.se[i] : (diff < 1e-12 ? 0.0 : 1e9);
    worst = std::max(worst, zi);
    ok += zi <= z;
  }
  return {static_cast<double>(ok) / static_cast<double>(hi - lo), worst};
}

std::vector<WeightedTrajectory> forwardBatch(const PolicyView& view, const Target& target, std::uint64_t seed,
                                             std::uint64_t step, int S) {
  std::vector<WeightedTrajectory> out;
  for (int k = 0; k < S; ++k) {
    Rng rng(seed, StreamTag::ForwardSample, step, static_cast<std::uint64_t>(k));
    out.push_back(sampleForward(view, target, rng));
  }
  return out;
}

std::vector<WeightedTrajectory> backwardBatch(const PolicyView& view, const Target& target, const TerminalSampler& sampler,
                                              std::uint64_t seed, std::uint64_t step, int S) {
  std::vector<WeightedTrajectory> out;
  for (int k = 0; k < S; ++k) {
    Rng rng(seed, StreamTag::BackwardSample, step, static_cast<std::uint64_t>(k));
    out.push_back(sampleBackward(view, target, &sampler, rng));
  }
  return out;
}

std::vector<double> gradientOf(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                               const EstimatorOutput& est) {
  std::vector<double> g(view.params().size(), 0.0);
  accumulateGradient(view, batch, est, g);
  return g;
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("TB loss on the one-bit toy") {
  const TabularTarget target(1, {1.0, 3.0});
  {
    auto m = toyPolicy(0.75, std::log(4.0));
    PolicyView view(m.policy, m.params);
    const auto t = view.weigh(view.evaluatePath({State{U}, State{O}}), target, Provenance::Forward);
    CHECK(tbLoss(t, view.psi()) == doctest::Approx(0.0).epsilon(1e-14));
  }
  auto m = toyPolicy(0.5, 0.0);
  PolicyView view(m.policy, m.params);
  const auto t = view.weigh(view.evaluatePath({State{U}, State{O}}), target, Provenance::Forward);
  CHECK(tbLoss(t, 0.0) == doctest::Approx(std::log(6.0) * std::log(6.0)).epsilon(1e-14));
  CHECK(tbLoss(t, 0.0) == doctest::Approx(3.2104).epsilon(1e-5));
  const std::vector<WeightedTrajectory> batch{t};
  const auto est = tbGradientBatch(batch, 0.0);
  CHECK(est.coefficients[0].psi == doctest::Approx(-3.5835).epsilon(1e-4));
  CHECK(gradientOf(view, batch, est)[m.policy.psiIndex()] == doctest::Approx(-2.0 * std::log(6.0)));

  const TabularTarget zeroR(1, {1.0, 0.0});
  auto dead = view.weigh(view.evaluatePath({State{U}, State{O}}), zeroR, Provenance::Forward);
  dead.logR = kNegInf;
  CHECK_THROWS_AS(tbLoss(dead, 0.0), Error);
}

TEST_CASE("balanced flow gives zero TB gradient") {
  const TabularTarget target(1, {1.0, 3.0});
  auto m = toyPolicy(0.75, std::log(4.0));
  PolicyView view(m.policy, m.params);
  std::vector<WeightedTrajectory> batch;
  for (State x : {State{Z}, State{O}})
    batch.push_back(view.weigh(view.evaluatePath({State{U}, x}), target, Provenance::Forward));
  const auto g = gradientOf(view, batch, tbGradientBatch(batch, view.psi()));
  for (double v : g) CHECK(std::abs(v) < 1e-14);
}

TEST_CASE("batched TB gradient equals the average of per-sample gradients") {
  auto m = makeModel(3, {8}, BackwardMode::LearnedDistinct, 13);
  m.params[m.policy.psiIndex()] = 0.4;
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 1);
  const auto batch = forwardBatch(view, target, 1, 0, 6);
  const auto g = gradientOf(view, batch, tbGradientBatch(batch, view.psi()));

  std::vector<double> manual(m.params.size(), 0.0);
  for (const auto& t : batch) {
    const double delta = view.psi() + t.logQ - t.logR - t.logPB;
    const auto gq = logQGradient(view, t.path);
    const auto gb = logPBGradient(view, t.path);
    for (std::size_t i = 0; i < manual.size(); ++i) manual[i] += 2 * delta * (gq[i] - gb[i]) / batch.size();
    manual[m.policy.psiIndex()] += 2 * delta / batch.size();
  }
  CHECK(testutil::maxAbsDiff(g, manual) < 1e-12);

  // Finite differences of the mean loss on a few coordinates.
  auto meanLoss = [&](std::vector<double> p) {
    PolicyView v(m.policy, p);
    double L = 0.0;
    for (const auto& t : batch) L += tbLoss(v.weigh(v.evaluatePath(t.path.states), target, Provenance::Forward), v.psi());
    return L / batch.size();
  };
  for (std::size_t i : {std::size_t{0}, std::size_t{17}, m.policy.theta().offset + 3, m.policy.psiIndex()}) {
    auto p = m.params, q = m.params;
    p[i] += 1e-6;
    q[i] -= 1e-6;
    CHECK(g[i] == doctest::Approx((meanLoss(p) - meanLoss(q)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("cvScaling examples") {
  const std::vector<double> a{0.0, 2.0};
  auto w = cvScaling(a, ControlVariate::LooLogW);
  CHECK(w.perSample[0] == doctest::Approx(2.0));
  CHECK(w.perSample[1] == doctest::Approx(0.0));
  auto z = cvScaling(a, ControlVariate::LooLogZ);
  CHECK(z.perSample[0] == doctest::Approx(2.0));
  CHECK(z.perSample[1] == doctest::Approx(0.0));
  const std::vector<double> b{0.0, 0.0, std::log(3.0)};
  auto z3 = cvScaling(b, ControlVariate::LooLogZ);
  CHECK(z3.perSample[0] == doctest::Approx(std::log(2.0)));
  CHECK(z3.perSample[2] == doctest::Approx(0.0));
  CHECK_THROWS_AS(cvScaling(std::vector<double>{1.0}, ControlVariate::LooLogW), Error);
}

TEST_CASE("LOO log-weight payoffs equal the full-mean form with the S/(S-1) rescaling") {
  const std::vector<double> lw{0.3, -1.2, 2.5, 0.0, 0.7};
  const auto cv = cvScaling(lw, ControlVariate::LooLogW);
  for (std::size_t s = 0; s < lw.size(); ++s)
    CHECK((cv.perSample[s] - lw[s]) == doctest::Approx((cv.fullMean - lw[s]) * cv.rescale).epsilon(1e-14));
  CHECK(cv.rescale == doctest::Approx(5.0 / 4.0));
}

TEST_CASE("optimal scaling") {
  Rng rng(3);
  const std::size_t S = 6, D = 4;
  std::vector<std::vector<double>> g(S, std::vector<double>(D)), h(S, std::vector<double>(D));
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t d = 0; d < D; ++d) g[s][d] = h[s][d] = rng.uniform();
  for (const auto& row : cvOptimalScaling(g, h))
    for (double c : row) CHECK(c == doctest::Approx(1.0));

  // Constant h: zero variance -> c = 0.
  for (auto& row : h) row.assign(D, 2.0);
  for (const auto& row : cvOptimalScaling(g, h))
    for (double c : row) CHECK(c == 0.0);

  CHECK_THROWS_AS(cvOptimalScaling({{1.0}, {2.0}}, {{1.0}, {2.0}}), Error);

  // Independent g and h: the scaling averages to zero.
  double sum = 0.0, sq = 0.0;
  const int reps = 4000;
  for (int r = 0; r < reps; ++r) {
    std::vector<std::vector<double>> gi(8, std::vector<double>(1)), hi(8, std::vector<double>(1));
    for (int s = 0; s < 8; ++s) {
      gi[s][0] = rng.uniform();
      hi[s][0] = rng.uniform();
    }
    const double c = cvOptimalScaling(gi, hi)[0][0];
    sum += c;
    sq += c * c;
  }
  const double mean = sum / reps;
  CHECK(std::abs(mean) < 3 * std::sqrt((sq / reps - mean * mean) / reps));

  // Correlated pairs: g' = g - c h has lower variance than g.
  double vg = 0.0, vgp = 0.0, mg = 0.0, mgp = 0.0;
  const int n = 4000;
  for (int r = 0; r < n; ++r) {
    std::vector<std::vector<double>> gi(8, std::vector<double>(1)), hi(8, std::vector<double>(1));
    for (int s = 0; s < 8; ++s) {
      hi[s][0] = rng.uniform() - 0.5;
      gi[s][0] = 1.0 + 3.0 * hi[s][0] + 0.2 * (rng.uniform() - 0.5);
    }
    const auto c = cvOptimalScaling(gi, hi);
    double est = 0.0, estp = 0.0;
    for (int s = 0; s < 8; ++s) {
      est += gi[s][0] / 8;
      estp += (gi[s][0] - c[s][0] * hi[s][0]) / 8;
    }
    mg += est;
    vg += est * est;
    mgp += estp;
    vgp += estp * estp;
  }
  vg = vg / n - (mg / n) * (mg / n);
  vgp = vgp / n - (mgp / n) * (mgp / n);
  CHECK(vgp < vg);
}

TEST_CASE("per-sample TB coefficients are twice the reverse-KL coefficients") {
  auto m = makeModel(3, {8}, BackwardMode::UniformFixed, 19);
  m.params[m.policy.psiIndex()] = 0.9;
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 5);
  const double logZ = exactLogPartition(target, m.params);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaKL;
  cfg.cv = ControlVariate::Fixed;
  cfg.fixedC = view.psi() - logZ;
  cfg.logZref = logZ;
  const auto batch = forwardBatch(view, target, 2, 0, 50);
  const auto tb = tbGradientBatch(batch, view.psi());
  const auto rkl = rklGradientBatch(view, batch, cfg);
  for (std::size_t s = 0; s < batch.size(); ++s)
    CHECK(std::abs(tb.coefficients[s].logQ - 2.0 * rkl.coefficients[s].logQ) < 1e-12);
}

TEST_CASE("reverse-KL estimator is unbiased against enumeration") {
  auto m = makeModel(3, {8}, BackwardMode::UniformFixed, 23, 1.5);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 6);
  const auto oracle = oracleExact(view, target);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaKL;
  cfg.cv = ControlVariate::Fixed;
  cfg.logZref = oracle.logZ;
  const auto phi = m.policy.phi();
  const auto mc = monteCarlo(m.params.size(), 100000, [&](int k) {
    const auto batch = forwardBatch(view, target, 9, static_cast<std::uint64_t>(k), 1);
    return gradientOf(view, batch, rklGradientBatch(view, batch, cfg));
  });
  const auto [frac, worst] = agreement(mc, oracle.rklGrad, phi.offset, phi.end(), 3.0);
  CHECK(frac >= 0.95);
  CHECK(worst < 5.0);

  // A different constant scaling keeps the same expectation.
  cfg.fixedC = 1.5;
  const auto shifted = monteCarlo(m.params.size(), 100000, [&](int k) {
    const auto batch = forwardBatch(view, target, 9, static_cast<std::uint64_t>(k), 1);
    return gradientOf(view, batch, rklGradientBatch(view, batch, cfg));
  });
  const auto [frac2, worst2] = agreement(shifted, oracle.rklGrad, phi.offset, phi.end(), 3.0);
  CHECK(frac2 >= 0.95);
  CHECK(worst2 < 5.0);
}

TEST_CASE("forward-KL estimator with a fixed backward model is the cross-entropy gradient") {
  auto m = makeModel(3, {8}, BackwardMode::UniformFixed, 29, 1.5);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 8);
  const auto oracle = oracleExact(view, target);
  ExactSampler sampler(target, m.params);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaKL;
  cfg.alpha = 1.0;
  cfg.cv = ControlVariate::Fixed;
  const auto batch = backwardBatch(view, target, sampler, 1, 0, 5);
  const auto est = fklGradientBatch(view, batch, cfg);
  for (const auto& c : est.coefficients) CHECK(c.logQ == doctest::Approx(-0.2));
  const auto phi = m.policy.phi();
  const auto mc = monteCarlo(m.params.size(), 60000, [&](int k) {
    const auto b = backwardBatch(view, target, sampler, 10, static_cast<std::uint64_t>(k), 1);
    return gradientOf(view, b, fklGradientBatch(view, b, cfg));
  });
  const auto [frac, worst] = agreement(mc, oracle.fklGrad, phi.offset, phi.end(), 3.0);
  CHECK(frac >= 0.95);
  CHECK(worst < 5.0);
}

TEST_CASE("forward KL on the one-bit toy has a closed form") {
  // R = (1, 3) / 4, P_F(One) = sigma(l), l = bias_One - bias_Zero. KL(P||Q) = const - E_P[log Q];
  // d/dl = -(3/4)(1 - p) + (1/4) p = p - 3/4.
  const TabularTarget target(1, {1.0, 3.0});
  auto m = toyPolicy(0.4, 0.0);
  PolicyView view(m.policy, m.params);
  const auto oracle = oracleExact(view, target);
  CHECK(oracle.fklGrad[3] == doctest::Approx(0.4 - 0.75).epsilon(1e-12));
  CHECK(oracle.fklGrad[2] == doctest::Approx(0.75 - 0.4).epsilon(1e-12));
}

TEST_CASE("estimators vanish when Q equals P") {
  const TabularTarget target(1, {1.0, 3.0});
  auto m = toyPolicy(0.75, 0.3);
  PolicyView view(m.policy, m.params);
  ExactSampler sampler(target, m.params);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaKL;
  for (ControlVariate cv : {ControlVariate::LooLogW, ControlVariate::LooLogZ, ControlVariate::LooOptimal}) {
    cfg.cv = cv;
    const auto f = forwardBatch(view, target, 3, 0, 8);
    for (double v : gradientOf(view, f, rklGradientBatch(view, f, cfg))) CHECK(std::abs(v) < 1e-12);
    const auto b = backwardBatch(view, target, sampler, 3, 0, 8);
    const auto g = gradientOf(view, b, fklGradientBatch(view, b, cfg));
    // phi is driven by -d log Q only, which is nonzero per sample; theta is absent.
    CHECK(std::abs(g[m.policy.psiIndex()]) < 1e-12);
  }
}

TEST_CASE("provenance is enforced") {
  auto m = makeModel(2, {4}, BackwardMode::UniformFixed, 3);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::uniformTabular(2);
  ExactSampler sampler(target, m.params);
  ObjectiveConfig cfg;
  const auto f = forwardBatch(view, target, 1, 0, 3);
  const auto b = backwardBatch(view, target, sampler, 1, 0, 3);
  try {
    rklGradientBatch(view, b, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RequiresForwardSamples);
  }
  try {
    fklGradientBatch(view, f, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RequiresBackwardSamples);
  }
}

TEST_CASE("huge residuals abort the step") {
  auto m = makeModel(2, {4}, BackwardMode::UniformFixed, 3);
  m.params[m.policy.psiIndex()] = 2e6;
  PolicyView view(m.policy, m.params);
  const auto target = testutil::uniformTabular(2);
  const auto f = forwardBatch(view, target, 1, 0, 2);
  try {
    tbGradientBatch(f, view.psi());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteGradient);
  }
}

TEST_CASE("alpha-TB mixtures") {
  auto m = makeModel(3, {8}, BackwardMode::LearnedDistinct, 37);
  m.params[m.policy.psiIndex()] = 0.2;
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 9);
  ExactSampler sampler(target, m.params);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaTB;
  cfg.batchSize = 8;
  cfg.paramMode = ParamMode::Distinct;
  SamplingContext ctx{&view, &target, &sampler, 11, 4};

  cfg.alpha = 0.0;
  auto r0 = alphaTbStep(cfg, ctx);
  CHECK(r0.numForward == 8);
  const auto f = forwardBatch(view, target, 11, 4, 8);
  const auto direct0 = tbGradientBatch(f, view.psi());
  CHECK(r0.estimate.loss == direct0.loss);
  CHECK(gradientOf(view, r0.batch, r0.estimate) == gradientOf(view, f, direct0));

  cfg.alpha = 1.0;
  auto r1 = alphaTbStep(cfg, ctx);
  CHECK(r1.numForward == 0);
  const auto b = backwardBatch(view, target, sampler, 11, 4, 8);
  const auto direct1 = tbGradientBatch(b, view.psi());
  CHECK(r1.estimate.loss == direct1.loss);
  CHECK(gradientOf(view, r1.batch, r1.estimate) == gradientOf(view, b, direct1));

  cfg.alpha = 0.5;
  auto r5 = alphaTbStep(cfg, ctx);
  CHECK(r5.numForward == 4);
  double lf = 0.0, lb = 0.0;
  for (std::size_t k = 0; k < 4; ++k) lf += tbLoss(r5.batch[k], view.psi()) / 4;
  for (std::size_t k = 4; k < 8; ++k) lb += tbLoss(r5.batch[k], view.psi()) / 4;
  CHECK(r5.estimate.loss == doctest::Approx(0.5 * lb + 0.5 * lf).epsilon(1e-14));

  cfg.mixing = Mixing::Bernoulli;
  auto rb = alphaTbStep(cfg, ctx);
  CHECK(rb.batch.size() == 8);

  cfg.mixing = Mixing::Deterministic;
  cfg.alpha = 0.5;
  SamplingContext noSampler{&view, &target, nullptr, 11, 4};
  CHECK_THROWS_AS(alphaTbStep(cfg, noSampler), Error);
}

TEST_CASE("alpha-KL endpoints reduce to the single divergences") {
  auto m = makeModel(3, {8}, BackwardMode::LearnedDistinct, 43);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 10);
  ExactSampler sampler(target, m.params);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaKL;
  cfg.cv = ControlVariate::LooLogW;
  cfg.batchSize = 6;
  cfg.paramMode = ParamMode::Distinct;
  SamplingContext ctx{&view, &target, &sampler, 5, 2};

  cfg.alpha = 0.0;
  auto r0 = alphaKlStep(cfg, ctx);
  const auto f = forwardBatch(view, target, 5, 2, 6);
  CHECK(gradientOf(view, r0.batch, r0.estimate) == gradientOf(view, f, rklGradientBatch(view, f, cfg)));

  cfg.alpha = 1.0;
  auto r1 = alphaKlStep(cfg, ctx);
  const auto b = backwardBatch(view, target, sampler, 5, 2, 6);
  CHECK(gradientOf(view, r1.batch, r1.estimate) == gradientOf(view, b, fklGradientBatch(view, b, cfg)));

  cfg.alpha = 0.5;
  auto r5 = alphaKlStep(cfg, ctx);
  CHECK(r5.numForward == 3);
}

TEST_CASE("fixed backward mode drops backward coefficients") {
  auto m = makeModel(3, {8}, BackwardMode::LearnedDistinct, 43);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 10);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaKL;
  cfg.cv = ControlVariate::LooLogW;
  cfg.batchSize = 4;
  cfg.paramMode = ParamMode::FixedBackward;
  SamplingContext ctx{&view, &target, nullptr, 5, 2};
  const auto r = alphaKlStep(cfg, ctx);
  const auto g = gradientOf(view, r.batch, r.estimate);
  for (std::size_t i = m.policy.theta().offset; i < m.policy.theta().end(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("config validation") {
  ObjectiveConfig cfg;
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.alpha = 0.5;
  cfg.cv = ControlVariate::LooOptimal;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.family = Family::AlphaKL;
  cfg.batchSize = 4;
  CHECK_THROWS_AS(cfg.validate(), Error);  // two per side is too few
  cfg.batchSize = 6;
  CHECK_NOTHROW(cfg.validate());
  CHECK(backwardShare(0.5, 8) == 4);
  CHECK(backwardShare(0.01, 8) == 1);
  CHECK(backwardShare(0.99, 8) == 7);
  CHECK(backwardShare(1.0, 8) == 8);
  CHECK(parseControlVariate("loo_logz") == ControlVariate::LooLogZ);
  CHECK_THROWS_AS(parseControlVariate("nope"), Error);
}

TEST_CASE("shared parameters") {
  auto distinct = makeModel(2, {6}, BackwardMode::LearnedDistinct, 3);
  PolicyView dv(distinct.policy, distinct.params);
  const auto target = testutil::randomTabular(2, 12);
  ObjectiveConfig cfg;
  cfg.family = Family::AlphaKL;
  const auto fb = forwardBatch(dv, target, 1, 0, 3);
  try {
    sharedParamGradient(dv, fb, Family::AlphaKL, Direction::Forward, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WrongParamMode);
  }

  auto m = makeModel(2, {6}, BackwardMode::SharedWithForward, 47, 1.5);
  PolicyView view(m.policy, m.params);
  const auto oracle = oracleExact(view, target);
  cfg.cv = ControlVariate::Fixed;
  cfg.logZref = oracle.logZ;
  const auto mc = monteCarlo(m.params.size(), 100000, [&](int k) {
    const auto batch = forwardBatch(view, target, 12, static_cast<std::uint64_t>(k), 1);
    return gradientOf(view, batch, sharedParamGradient(view, batch, Family::AlphaKL, Direction::Forward, cfg));
  });
  const auto [frac, worst] = agreement(mc, oracle.rklGrad, m.policy.phi().offset, m.policy.phi().end(), 3.0);
  CHECK(frac >= 0.95);
  CHECK(worst < 5.0);

  // TB with psi = log Z: Q-score coefficients are twice the reverse-KL ones with c = 0.
  m.params[m.policy.psiIndex()] = oracle.logZ;
  PolicyView tv(m.policy, m.params);
  const auto batch = forwardBatch(tv, target, 13, 0, 20);
  const auto tb = sharedParamGradient(tv, batch, Family::AlphaTB, Direction::Forward, ObjectiveConfig{});
  const auto rkl = sharedParamGradient(tv, batch, Family::AlphaKL, Direction::Forward, cfg);
  for (std::size_t s = 0; s < batch.size(); ++s)
    CHECK(std::abs(tb.coefficients[s].logQ - 2.0 * rkl.coefficients[s].logQ) < 1e-12);
}

TEST_CASE("diagnostics") {
  auto m = makeModel(2, {4}, BackwardMode::UniformFixed, 0);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::uniformTabular(2);
  const auto batch = forwardBatch(view, target, 1, 0, 5);
  const auto d = computeDiagnostics(batch);
  // Uniform Q and R: every log-weight is log(1/2) - log(1/8).
  CHECK(d.meanLogW == doctest::Approx(std::log(4.0)));
  CHECK(d.varLogW == doctest::Approx(0.0));
  CHECK(d.ess == doctest::Approx(5.0));
}

}  // TEST_SUITE
