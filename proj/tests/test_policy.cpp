#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

#include "gfnvi/error.hpp"
#include "gfnvi/logmath.hpp"
#include "gfnvi/policy.hpp"
#include "gfnvi/targets.hpp"
#include "helpers.hpp"

using namespace gfnvi;
using testutil::makeModel;

namespace {

constexpr Bit U = Bit::Unset;
constexpr Bit Z = Bit::Zero;
constexpr Bit O = Bit::One;

std::vector<State> allStates(int D) {
  std::vector<State> out;
  int total = 1;
  for (int k = 0; k < D; ++k) total *= 3;
  for (int code = 0; code < total; ++code) {
    std::vector<Bit> bits;
    int c = code;
    for (int k = 0; k < D; ++k, c /= 3) bits.push_back(static_cast<Bit>(c % 3));
    out.emplace_back(bits);
  }
  return out;
}

// Local trajectory enumeration with its own accumulation of step log-probs.
void enumerate(const PolicyView& view, const std::function<void(const std::vector<State>&, double, double)>& f) {
  std::vector<State> path{State(view.dim())};
  std::function<void(double, double)> rec = [&](double lq, double lb) {
    const State s = path.back();
    if (s.isTerminating()) {
      f(path, lq, lb);
      return;
    }
    for (const State& c : children(s)) {
      path.push_back(c);
      rec(lq + view.forwardStepLogProb(s, c), lb + view.backwardStepLogProb(s, c));
      path.pop_back();
    }
  };
  rec(0.0, 0.0);
}

std::vector<double> exactQT(const PolicyView& view) {
  std::vector<double> q(std::size_t{1} << view.dim(), 0.0);
  enumerate(view, [&](const std::vector<State>& p, double lq, double) { q[terminalIndex(p.back())] += std::exp(lq); });
  return q;
}

double fdCheck(const Policy& policy, std::vector<double> params, const Trajectory& path, bool useQ,
               std::size_t probes, std::uint64_t seed) {
  const std::vector<double> analytic =
      useQ ? logQGradient(PolicyView(policy, params), path) : logPBGradient(PolicyView(policy, params), path);
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    const std::size_t i = rng.below(policy.parameterCount() - 1);
    const double h = 1e-5;
    const double orig = params[i];
    auto eval = [&](double v) {
      params[i] = v;
      PolicyView view(policy, params);
      const Trajectory t = view.evaluatePath(path.states);
      return useQ ? t.logQ() : t.logPB();
    };
    const double fd = (eval(orig + h) - eval(orig - h)) / (2 * h);
    params[i] = orig;
    const double scale = std::max(1e-6, std::abs(fd) + std::abs(analytic[i]));
    worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("forward and backward normalization over every state") {
  for (BackwardMode mode : {BackwardMode::UniformFixed, BackwardMode::LearnedDistinct, BackwardMode::SharedWithForward}) {
    for (LogitInput input : {LogitInput::CurrentState, LogitInput::ChildState}) {
      auto m = makeModel(3, {8}, mode, 5, 1.0, input);
      PolicyView view(m.policy, m.params);
      for (const State& s : allStates(3)) {
        if (!s.isTerminating()) {
          double total = 0.0;
          for (const State& c : children(s)) total += std::exp(view.forwardStepLogProb(s, c));
          CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
        if (!s.isRoot()) {
          double total = 0.0;
          for (const State& p : parents(s)) total += std::exp(view.backwardStepLogProb(p, s));
          CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("zero-weight forward probabilities") {
  auto m4 = makeModel(4, {8}, BackwardMode::UniformFixed, 0);
  PolicyView v4(m4.policy, m4.params);
  CHECK(v4.forwardStepLogProb(State{O, U, U, U}, State{O, U, Z, U}) == doctest::Approx(std::log(1.0 / 6.0)));
  auto m1 = makeModel(1, {8}, BackwardMode::UniformFixed, 0);
  PolicyView v1(m1.policy, m1.params);
  CHECK(v1.forwardStepLogProb(State{U}, State{O}) == doctest::Approx(std::log(0.5)));
  CHECK_THROWS_AS(v1.forwardStepLogProb(State{O}, State{Z}), Error);
}

TEST_CASE("forward step matches the raw logits") {
  auto m = makeModel(4, {16}, BackwardMode::UniformFixed, 21);
  PolicyView view(m.policy, m.params);
  const std::span<const double> phi = std::span<const double>(m.params).subspan(m.policy.phi().offset, m.policy.phi().size);
  const State s{O, U, U, Z};
  const State c = s.with(2, O);
  const auto out = m.policy.forwardNet().forward(phi, toNumeric(s));
  const double add = out[2 * 2 + 1], flip = out[2 * 2 + 0];
  const double expected = std::log(0.5 * (std::exp(add) / (std::exp(add) + std::exp(flip))));
  CHECK(view.forwardStepLogProb(s, c) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("child-state logits read the child and its flipped counterpart") {
  auto m = makeModel(3, {16}, BackwardMode::UniformFixed, 8, 1.0, LogitInput::ChildState);
  PolicyView view(m.policy, m.params);
  const std::span<const double> phi = std::span<const double>(m.params).subspan(0, m.policy.phi().size);
  const State s{U, Z, U};
  const State c{O, Z, U};
  const double add = m.policy.forwardNet().forward(phi, toNumeric(c))[0 * 2 + 1];
  const double flip = m.policy.forwardNet().forward(phi, flipAddedBit(s, c))[0 * 2 + 0];
  const double expected = std::log(0.5) + add - logAddExp(add, flip);
  CHECK(view.forwardStepLogProb(s, c) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("backward step probabilities") {
  auto m = makeModel(4, {8}, BackwardMode::UniformFixed, 3);
  PolicyView view(m.policy, m.params);
  CHECK(view.backwardStepLogProb(State{O, U, Z, U}, State{O, O, Z, U}) == doctest::Approx(std::log(1.0 / 3.0)));
  CHECK(view.backwardStepLogProb(State{U, U, U, U}, State{U, O, U, U}) == doctest::Approx(0.0));
  auto learned = makeModel(4, {8}, BackwardMode::LearnedDistinct, 0);
  PolicyView lv(learned.policy, learned.params);
  CHECK(lv.backwardStepLogProb(State{O, U, Z, O}, State{O, O, Z, O}) == doctest::Approx(std::log(0.25)));
  CHECK_THROWS_AS(view.backwardStepLogProb(State{O, U, U, U}, State{Z, O, U, U}), Error);
}

TEST_CASE("parameter slices per backward mode") {
  auto u = makeModel(3, {8}, BackwardMode::UniformFixed, 1);
  CHECK(u.policy.theta().empty());
  CHECK(u.policy.forwardNet().spec().outputDim == 6);
  auto l = makeModel(3, {8}, BackwardMode::LearnedDistinct, 1);
  CHECK(l.policy.theta().offset == l.policy.phi().end());
  CHECK(l.policy.backwardNet()->spec().outputDim == 6);
  CHECK(l.policy.psiIndex() == l.policy.theta().end());
  auto s = makeModel(3, {8}, BackwardMode::SharedWithForward, 1);
  CHECK(s.policy.theta().empty());
  CHECK(s.policy.forwardNet().spec().outputDim == 12);
  CHECK(s.params[s.policy.psiIndex()] == 0.0);
}

TEST_CASE("forward sampling frequencies with a zero-weight net") {
  auto m1 = makeModel(1, {4}, BackwardMode::UniformFixed, 0);
  PolicyView v1(m1.policy, m1.params);
  const auto target1 = testutil::uniformTabular(1);
  int ones = 0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    Rng rng(1, StreamTag::ForwardSample, 0, static_cast<std::uint64_t>(k));
    ones += sampleForward(v1, target1, rng).terminal().at(0) == O;
  }
  CHECK(std::abs(ones / double(n) - 0.5) < 3 * std::sqrt(0.25 / n));

  auto m2 = makeModel(2, {4}, BackwardMode::UniformFixed, 0);
  PolicyView v2(m2.policy, m2.params);
  const auto target2 = testutil::uniformTabular(2);
  std::vector<int> counts(4, 0);
  for (int k = 0; k < n; ++k) {
    Rng rng(2, StreamTag::ForwardSample, 0, static_cast<std::uint64_t>(k));
    counts[terminalIndex(sampleForward(v2, target2, rng).terminal())]++;
  }
  for (int c : counts) CHECK(std::abs(c / double(n) - 0.25) < 3 * std::sqrt(0.25 * 0.75 / n));
}

TEST_CASE("forward sampling matches the exact terminal marginal") {
  auto m = makeModel(3, {16}, BackwardMode::UniformFixed, 77, 2.0);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::uniformTabular(3);
  const auto exact = exactQT(view);
  std::vector<double> freq(8, 0.0);
  const int n = 1000000;
  for (int k = 0; k < n; ++k) {
    Rng rng(3, StreamTag::ForwardSample, 0, static_cast<std::uint64_t>(k));
    const auto t = sampleForward(view, target, rng);
    freq[terminalIndex(t.terminal())] += 1.0 / n;
    if (k < 1000) CHECK(t.logQ == doctest::Approx(view.evaluatePath(t.path.states).logQ()).epsilon(1e-15));
  }
  CHECK(testutil::totalVariation(freq, exact) < 0.01);
}

TEST_CASE("backward sampling") {
  auto m = makeModel(2, {4}, BackwardMode::UniformFixed, 4);
  PolicyView view(m.policy, m.params);
  const auto uniform = testutil::uniformTabular(2);
  CHECK_THROWS_AS(
      [&] {
        Rng rng(1);
        sampleBackward(view, uniform, nullptr, rng);
      }(),
      Error);

  ExactSampler sampler(uniform, m.params);
  std::map<std::vector<State>, int> counts;
  const int n = 80000;
  for (int k = 0; k < n; ++k) {
    Rng rng(5, StreamTag::BackwardSample, 0, static_cast<std::uint64_t>(k));
    const auto t = sampleBackward(view, uniform, &sampler, rng);
    CHECK(t.provenance == Provenance::Backward);
    counts[t.path.states]++;
  }
  // 4 terminals x 2 removal orders.
  CHECK(counts.size() == 8);
  for (const auto& [path, c] : counts) CHECK(std::abs(c / double(n) - 0.125) < 4 * std::sqrt(0.125 * 0.875 / n));
}

TEST_CASE("backward trajectories follow P(tau) exactly") {
  auto m = makeModel(3, {16}, BackwardMode::LearnedDistinct, 9, 2.0);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(3, 4);
  ExactSampler sampler(target, m.params);
  const double logZ = exactLogPartition(target, m.params);
  std::map<std::vector<State>, double> exact, freq;
  enumerate(view, [&](const std::vector<State>& p, double, double lb) {
    exact[p] = std::exp(target.logReward(m.params, p.back()) + lb - logZ);
  });
  const int n = 1000000;
  for (int k = 0; k < n; ++k) {
    Rng rng(6, StreamTag::BackwardSample, 0, static_cast<std::uint64_t>(k));
    freq[sampleBackward(view, target, &sampler, rng).path.states] += 1.0 / n;
  }
  double tv = 0.0;
  double total = 0.0;
  for (const auto& [p, e] : exact) {
    tv += 0.5 * std::abs(e - freq[p]);
    total += e;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tv < 0.01);
}

TEST_CASE("unbuilding from a terminal") {
  auto m1 = makeModel(1, {4}, BackwardMode::UniformFixed, 2);
  PolicyView v1(m1.policy, m1.params);
  Rng rng(7);
  CHECK(v1.sampleBackwardFrom(State{Z}, rng).logPB() == 0.0);
  CHECK_THROWS_AS(v1.sampleBackwardFrom(State{U}, rng), Error);

  auto m3 = makeModel(3, {4}, BackwardMode::UniformFixed, 2);
  PolicyView v3(m3.policy, m3.params);
  for (int k = 0; k < 20; ++k) {
    const Trajectory t = v3.sampleBackwardFrom(State{O, Z, O}, rng);
    CHECK(t.states.front().isRoot());
    CHECK(t.terminal() == State{O, Z, O});
    CHECK(t.logPB() == doctest::Approx(std::log(1.0 / 6.0)));
  }

  // 24 removal orders at D=4; chi-square against uniform, 23 dof.
  auto m4 = makeModel(4, {4}, BackwardMode::UniformFixed, 2);
  PolicyView v4(m4.policy, m4.params);
  std::map<std::vector<State>, int> counts;
  const int n = 48000;
  for (int k = 0; k < n; ++k) {
    Rng r(8, StreamTag::BackwardSample, 0, static_cast<std::uint64_t>(k));
    counts[v4.sampleBackwardFrom(State{O, O, Z, Z}, r).states]++;
  }
  CHECK(counts.size() == 24);
  double chi2 = 0.0;
  const double e = n / 24.0;
  for (const auto& [p, c] : counts) chi2 += (c - e) * (c - e) / e;
  CHECK(chi2 < 49.7);  // 0.999 quantile of chi2(23)
}

TEST_CASE("trajectory flow") {
  auto m = makeModel(1, {4}, BackwardMode::UniformFixed, 0);
  m.params[m.policy.psiIndex()] = std::log(4.0);
  PolicyView view(m.policy, m.params);
  const Trajectory t = view.evaluatePath({State{U}, State{O}});
  CHECK(view.trajectoryFlow(t) == doctest::Approx(std::log(2.0)));

  auto s = makeModel(3, {8}, BackwardMode::UniformFixed, 6);
  s.params[s.policy.psiIndex()] = 0.7;
  PolicyView sv(s.policy, s.params);
  Rng rng(1);
  const Trajectory p = sv.samplePathForward(rng);
  double sum = 0.7;
  for (std::size_t k = 0; k + 1 < p.states.size(); ++k) sum += sv.forwardStepLogProb(p.states[k], p.states[k + 1]);
  CHECK(sv.trajectoryFlow(p) == doctest::Approx(sum).epsilon(1e-14));
}

TEST_CASE("trajectory probabilities sum to one") {
  auto m = makeModel(4, {8}, BackwardMode::LearnedDistinct, 12);
  PolicyView view(m.policy, m.params);
  const auto target = testutil::randomTabular(4, 2);
  const double logZ = exactLogPartition(target, m.params);
  double q = 0.0, p = 0.0;
  std::size_t count = 0;
  enumerate(view, [&](const std::vector<State>& path, double lq, double lb) {
    q += std::exp(lq);
    p += std::exp(lb + target.logReward(m.params, path.back()) - logZ);
    ++count;
  });
  CHECK(count == 24 * 16);
  CHECK(q == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("log-probability gradients match finite differences") {
  struct Case {
    BackwardMode mode;
    LogitInput input;
  };
  for (Case c : {Case{BackwardMode::UniformFixed, LogitInput::CurrentState},
                 Case{BackwardMode::UniformFixed, LogitInput::ChildState},
                 Case{BackwardMode::LearnedDistinct, LogitInput::CurrentState},
                 Case{BackwardMode::SharedWithForward, LogitInput::CurrentState},
                 Case{BackwardMode::SharedWithForward, LogitInput::ChildState}}) {
    auto m = makeModel(4, {6}, c.mode, 31, 1.5, c.input);
    PolicyView view(m.policy, m.params);
    Rng rng(4);
    const Trajectory path = view.samplePathForward(rng);
    CHECK(fdCheck(m.policy, m.params, path, true, 60, 1) < 1e-6);
    if (c.mode != BackwardMode::UniformFixed) CHECK(fdCheck(m.policy, m.params, path, false, 60, 2) < 1e-6);
  }
}

TEST_CASE("score accumulator matches separate gradients") {
  auto m = makeModel(3, {6}, BackwardMode::LearnedDistinct, 41);
  PolicyView view(m.policy, m.params);
  Rng rng(9);
  const Trajectory a = view.samplePathForward(rng);
  const Trajectory b = view.samplePathForward(rng);
  std::vector<double> acc(m.params.size(), 0.0);
  ScoreAccumulator sa(view);
  sa.addLogQ(a, 0.7);
  sa.addLogPB(a, -1.3);
  sa.addLogQ(b, 2.0);
  sa.flush(acc);
  const auto qa = logQGradient(view, a), pa = logPBGradient(view, a), qb = logQGradient(view, b);
  for (std::size_t i = 0; i < acc.size(); ++i)
    CHECK(acc[i] == doctest::Approx(0.7 * qa[i] - 1.3 * pa[i] + 2.0 * qb[i]).epsilon(1e-12));
}

}  // TEST_SUITE
