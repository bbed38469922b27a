#include "gfnvi/policy.hpp"

#include <cmath>
#include <numeric>

#include "gfnvi/error.hpp"
#include "gfnvi/logmath.hpp"

namespace gfnvi {

namespace {

int valueIndex(Bit b) { return b == Bit::One ? 1 : 0; }
Bit otherValue(Bit b) { return b == Bit::One ? Bit::Zero : Bit::One; }

void requireTerminating(const State& x) {
  if (!x.isTerminating()) throw Error(ErrorCode::NotTerminating, x.toString());
}

}  // namespace

BackwardMode parseBackwardMode(const std::string& name) {
  if (name == "uniform") return BackwardMode::UniformFixed;
  if (name == "learned") return BackwardMode::LearnedDistinct;
  if (name == "shared") return BackwardMode::SharedWithForward;
  throw Error(ErrorCode::ConfigError, "unknown backward mode '" + name + "'");
}

std::string backwardModeName(BackwardMode mode) {
  switch (mode) {
    case BackwardMode::UniformFixed: return "uniform";
    case BackwardMode::LearnedDistinct: return "learned";
    case BackwardMode::SharedWithForward: return "shared";
  }
  return "uniform";
}

double Trajectory::logQ() const { return std::accumulate(stepLogPF.begin(), stepLogPF.end(), 0.0); }
double Trajectory::logPB() const { return std::accumulate(stepLogPB.begin(), stepLogPB.end(), 0.0); }

Policy::Policy(PolicyConfig config)
    : config_(std::move(config)),
      forwardNet_(MlpSpec{config_.dim, config_.hidden,
                          (config_.backward == BackwardMode::SharedWithForward ? 4 : 2) * config_.dim,
                          config_.activation, config_.initScale}) {
  if (config_.dim < 1 || config_.dim > State::kMaxDim) {
    throw Error(ErrorCode::InvalidArgument, "policy dimension out of range");
  }
  phi_ = {0, forwardNet_.parameterCount()};
  if (config_.backward == BackwardMode::LearnedDistinct) {
    backwardNet_.emplace(MlpSpec{config_.dim, config_.hidden, 2 * config_.dim, config_.activation,
                                 config_.initScale});
    theta_ = {phi_.end(), backwardNet_->parameterCount()};
  } else {
    theta_ = {phi_.end(), 0};
  }
  psiIndex_ = theta_.end();
}

std::vector<NamedSpec> Policy::netSpecs() const {
  std::vector<NamedSpec> out{{"forward", forwardNet_.spec()}};
  if (backwardNet_) out.push_back({"backward", backwardNet_->spec()});
  return out;
}

void Policy::initialize(std::span<double> params, Rng& rng) const {
  if (params.size() < parameterCount()) throw Error(ErrorCode::DimensionMismatch, "parameter vector too short");
  forwardNet_.initialize(params.subspan(phi_.offset, phi_.size), rng);
  if (backwardNet_) backwardNet_->initialize(params.subspan(theta_.offset, theta_.size), rng);
  params[psiIndex_] = 0.0;
}

PolicyView::PolicyView(const Policy& policy, std::span<const double> params)
    : policy_(&policy), params_(params) {
  if (params.size() < policy.parameterCount()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter vector shorter than policy layout");
  }
}

const std::vector<double>& PolicyView::forwardOutputs(const State& s) const {
  auto it = forwardCache_.find(s);
  if (it != forwardCache_.end()) return it->second;
  const Slice& phi = policy_->phi();
  auto out = policy_->forwardNet().forward(params_.subspan(phi.offset, phi.size), toNumeric(s));
  return forwardCache_.emplace(s, std::move(out)).first->second;
}

const std::vector<double>& PolicyView::backwardOutputs(const State& s) const {
  if (policy_->backwardMode() == BackwardMode::SharedWithForward) return forwardOutputs(s);
  auto it = backwardCache_.find(s);
  if (it != backwardCache_.end()) return it->second;
  const Slice& theta = policy_->theta();
  auto out = policy_->backwardNet()->forward(params_.subspan(theta.offset, theta.size), toNumeric(s));
  return backwardCache_.emplace(s, std::move(out)).first->second;
}

namespace {

int forwardIndex(BackwardMode mode, int position, Bit value) {
  const int stride = mode == BackwardMode::SharedWithForward ? 4 : 2;
  return stride * position + valueIndex(value);
}

}  // namespace

int PolicyView::removalIndex(int position, Bit value) const {
  if (policy_->backwardMode() == BackwardMode::SharedWithForward) return 4 * position + 2 + valueIndex(value);
  return 2 * position + valueIndex(value);
}

std::pair<double, double> PolicyView::forwardLogitPair(const State& s, const State& child) const {
  const AddedBit added = addedBit(s, child);
  const BackwardMode mode = policy_->backwardMode();
  const int addIdx = forwardIndex(mode, added.position, added.value);
  const int flipIdx = forwardIndex(mode, added.position, otherValue(added.value));
  if (policy_->config().logitInput == LogitInput::CurrentState) {
    const auto& out = forwardOutputs(s);
    return {out[addIdx], out[flipIdx]};
  }
  const State flipped = child.with(added.position, otherValue(added.value));
  return {forwardOutputs(child)[addIdx], forwardOutputs(flipped)[flipIdx]};
}

double PolicyView::forwardStepLogProb(const State& s, const State& child) const {
  const auto [added, flipped] = forwardLogitPair(s, child);
  return -std::log(static_cast<double>(s.dim() - s.numSet())) - softplus(flipped - added);
}

double PolicyView::backwardStepLogProb(const State& parent, const State& s) const {
  const AddedBit removed = addedBit(parent, s);
  if (policy_->backwardMode() == BackwardMode::UniformFixed) {
    return -std::log(static_cast<double>(s.numSet()));
  }
  const auto& out = backwardOutputs(s);
  std::vector<double> scores;
  scores.reserve(s.numSet());
  double chosen = 0.0;
  for (int d = 0; d < s.dim(); ++d) {
    const Bit b = s.at(d);
    if (b == Bit::Unset) continue;
    const double r = out[removalIndex(d, b)];
    scores.push_back(r);
    if (d == removed.position) chosen = r;
  }
  return chosen - logSumExp(scores);
}

double PolicyView::logQ(const Trajectory& path) const {
  double acc = 0.0;
  for (std::size_t t = 0; t + 1 < path.states.size(); ++t) {
    acc += forwardStepLogProb(path.states[t], path.states[t + 1]);
  }
  return acc;
}

double PolicyView::logPB(const Trajectory& path) const {
  double acc = 0.0;
  for (std::size_t t = 0; t + 1 < path.states.size(); ++t) {
    acc += backwardStepLogProb(path.states[t], path.states[t + 1]);
  }
  return acc;
}

State PolicyView::sampleForwardStep(const State& s, Rng& rng) const {
  if (s.isTerminating()) throw Error(ErrorCode::TerminatingStateHasNoChildren, s.toString());
  // k-th Unset position in ascending order.
  std::size_t k = rng.below(static_cast<std::size_t>(s.dim() - s.numSet()));
  int position = -1;
  for (int d = 0; d < s.dim(); ++d) {
    if (s.at(d) != Bit::Unset) continue;
    if (k-- == 0) {
      position = d;
      break;
    }
  }
  const auto [zeroLogit, oneLogit] = forwardLogitPair(s, s.with(position, Bit::Zero));
  const double pOne = sigmoid(oneLogit - zeroLogit);
  return s.with(position, rng.uniform() < pOne ? Bit::One : Bit::Zero);
}

State PolicyView::sampleBackwardStep(const State& s, Rng& rng) const {
  if (s.isRoot()) throw Error(ErrorCode::RootHasNoParents, s.toString());
  std::vector<int> setPositions;
  for (int d = 0; d < s.dim(); ++d) {
    if (s.at(d) != Bit::Unset) setPositions.push_back(d);
  }
  if (policy_->backwardMode() == BackwardMode::UniformFixed) {
    return s.with(setPositions[rng.below(setPositions.size())], Bit::Unset);
  }
  const auto& out = backwardOutputs(s);
  std::vector<double> scores;
  for (int d : setPositions) scores.push_back(out[removalIndex(d, s.at(d))]);
  const double lse = logSumExp(scores);
  double u = rng.uniform();
  int position = setPositions.back();
  for (std::size_t k = 0; k < setPositions.size(); ++k) {
    u -= std::exp(scores[k] - lse);
    if (u < 0.0) {
      position = setPositions[k];
      break;
    }
  }
  return s.with(position, Bit::Unset);
}

Trajectory PolicyView::samplePathForward(Rng& rng) const {
  const int dim = policy_->dim();
  Trajectory path;
  path.states.reserve(dim + 1);
  path.states.emplace_back(dim);
  for (int t = 0; t < dim; ++t) {
    const State& s = path.states.back();
    State child = sampleForwardStep(s, rng);
    path.stepLogPF.push_back(forwardStepLogProb(s, child));
    path.stepLogPB.push_back(backwardStepLogProb(s, child));
    path.states.push_back(std::move(child));
  }
  return path;
}

Trajectory PolicyView::sampleBackwardFrom(const State& x, Rng& rng) const {
  requireTerminating(x);
  if (x.dim() != policy_->dim()) throw Error(ErrorCode::DimensionMismatch, "terminal dimension");
  std::vector<State> reversed{x};
  reversed.reserve(x.dim() + 1);
  while (!reversed.back().isRoot()) reversed.push_back(sampleBackwardStep(reversed.back(), rng));
  return evaluatePath(std::vector<State>(reversed.rbegin(), reversed.rend()));
}

Trajectory PolicyView::evaluatePath(std::vector<State> states) const {
  Trajectory path;
  path.states = std::move(states);
  for (std::size_t t = 0; t + 1 < path.states.size(); ++t) {
    path.stepLogPF.push_back(forwardStepLogProb(path.states[t], path.states[t + 1]));
    path.stepLogPB.push_back(backwardStepLogProb(path.states[t], path.states[t + 1]));
  }
  return path;
}

WeightedTrajectory PolicyView::weigh(Trajectory path, const Target& target, Provenance provenance) const {
  WeightedTrajectory w;
  w.logQ = path.logQ();
  w.logPB = path.logPB();
  w.logR = target.logReward(params_, path.terminal());
  w.provenance = provenance;
  w.path = std::move(path);
  return w;
}

WeightedTrajectory sampleForward(const PolicyView& view, const Target& target, Rng& rng) {
  return view.weigh(view.samplePathForward(rng), target, Provenance::Forward);
}

WeightedTrajectory sampleBackward(const PolicyView& view, const Target& target,
                                  const TerminalSampler* sampler, Rng& rng) {
  if (sampler == nullptr) {
    throw Error(ErrorCode::NoTerminalSamplerAvailable, "target " + target.kind() + " has no terminal sampler");
  }
  constexpr int kMaxRedraws = 1000;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const State x = sampler->sample(rng);
    if (target.logReward(view.params(), x) == kNegInf) continue;
    return view.weigh(view.sampleBackwardFrom(x, rng), target, Provenance::Backward);
  }
  throw Error(ErrorCode::NonFiniteLoss, "terminal sampler keeps producing zero-reward states");
}

ScoreAccumulator::ScoreAccumulator(const PolicyView& view) : view_(&view) {}

std::vector<double>& ScoreAccumulator::slot(std::unordered_map<State, std::vector<double>>& map,
                                            const State& s, std::size_t width) {
  auto it = map.find(s);
  if (it == map.end()) it = map.emplace(s, std::vector<double>(width, 0.0)).first;
  return it->second;
}

void ScoreAccumulator::addForwardStep(const State& s, const State& child, double coef) {
  if (coef == 0.0) return;
  const Policy& policy = view_->policy();
  const AddedBit added = addedBit(s, child);
  const auto [addLogit, flipLogit] = view_->forwardLogitPair(s, child);
  // d/d(add) log sigma(add - flip) = 1 - p; d/d(flip) = -(1 - p).
  const double g = coef * (1.0 - sigmoid(addLogit - flipLogit));
  const BackwardMode mode = policy.backwardMode();
  const std::size_t width = static_cast<std::size_t>(policy.forwardNet().spec().outputDim);
  const int addIdx = forwardIndex(mode, added.position, added.value);
  const int flipIdx = forwardIndex(mode, added.position, otherValue(added.value));
  if (policy.config().logitInput == LogitInput::CurrentState) {
    auto& up = slot(forwardUpstream_, s, width);
    up[addIdx] += g;
    up[flipIdx] -= g;
  } else {
    slot(forwardUpstream_, child, width)[addIdx] += g;
    slot(forwardUpstream_, child.with(added.position, otherValue(added.value)), width)[flipIdx] -= g;
  }
}

void ScoreAccumulator::addBackwardStep(const State& parent, const State& s, double coef) {
  const Policy& policy = view_->policy();
  if (coef == 0.0 || policy.backwardMode() == BackwardMode::UniformFixed) return;
  const AddedBit removed = addedBit(parent, s);
  const auto& out = view_->backwardOutputs(s);
  std::vector<int> positions;
  std::vector<double> scores;
  for (int d = 0; d < s.dim(); ++d) {
    const Bit b = s.at(d);
    if (b == Bit::Unset) continue;
    positions.push_back(d);
    scores.push_back(out[view_->removalIndex(d, b)]);
  }
  const double lse = logSumExp(scores);
  const bool shared = policy.backwardMode() == BackwardMode::SharedWithForward;
  auto& up = shared ? slot(forwardUpstream_, s, out.size()) : slot(backwardUpstream_, s, out.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const int d = positions[k];
    up[view_->removalIndex(d, s.at(d))] += coef * ((d == removed.position ? 1.0 : 0.0) - std::exp(scores[k] - lse));
  }
}

void ScoreAccumulator::addLogQ(const Trajectory& path, double coef) {
  if (coef == 0.0) return;
  for (std::size_t t = 0; t + 1 < path.states.size(); ++t) addForwardStep(path.states[t], path.states[t + 1], coef);
}

void ScoreAccumulator::addLogPB(const Trajectory& path, double coef) {
  if (coef == 0.0) return;
  for (std::size_t t = 0; t + 1 < path.states.size(); ++t) addBackwardStep(path.states[t], path.states[t + 1], coef);
}

void ScoreAccumulator::flush(std::span<double> grad) {
  const Policy& policy = view_->policy();
  if (grad.size() < policy.parameterCount()) throw Error(ErrorCode::DimensionMismatch, "gradient too short");
  const auto params = view_->params();
  const Slice& phi = policy.phi();
  for (const auto& [s, upstream] : forwardUpstream_) {
    policy.forwardNet().backward(params.subspan(phi.offset, phi.size), toNumeric(s), upstream,
                                 grad.subspan(phi.offset, phi.size));
  }
  if (const Mlp* net = policy.backwardNet()) {
    const Slice& theta = policy.theta();
    for (const auto& [s, upstream] : backwardUpstream_) {
      net->backward(params.subspan(theta.offset, theta.size), toNumeric(s), upstream,
                    grad.subspan(theta.offset, theta.size));
    }
  }
  forwardUpstream_.clear();
  backwardUpstream_.clear();
}

std::vector<double> logQGradient(const PolicyView& view, const Trajectory& path) {
  std::vector<double> grad(view.params().size(), 0.0);
  ScoreAccumulator acc(view);
  acc.addLogQ(path, 1.0);
  acc.flush(grad);
  return grad;
}

std::vector<double> logPBGradient(const PolicyView& view, const Trajectory& path) {
  std::vector<double> grad(view.params().size(), 0.0);
  ScoreAccumulator acc(view);
  acc.addLogPB(path, 1.0);
  acc.flush(grad);
  return grad;
}

}  // namespace gfnvi
