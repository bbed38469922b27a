#include "gfnvi/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfnvi/error.hpp"
#include "gfnvi/logmath.hpp"

namespace gfnvi {

namespace {

constexpr double kDeltaAbort = 1e6;

std::vector<double> logWeights(std::span<const WeightedTrajectory> batch) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& t : batch) out.push_back(t.logWeight());
  return out;
}

void checkResidual(double delta) {
  if (!std::isfinite(delta)) throw Error(ErrorCode::NonFiniteLoss, "non-finite TB residual");
  if (std::abs(delta) > kDeltaAbort)
    throw Error(ErrorCode::NonFiniteGradient, "TB residual exceeds 1e6");
}

void requireProvenance(std::span<const WeightedTrajectory> batch, Provenance wanted, ErrorCode code) {
  for (const auto& t : batch)
    if (t.provenance != wanted && t.provenance != Provenance::Enumerated)
      throw Error(code, wanted == Provenance::Forward ? "estimator needs forward samples"
                                                      : "estimator needs backward samples");
}

void checkLogWeights(const std::vector<double>& lw) {
  for (double v : lw)
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "non-finite log-weight in batch");
}

// Baselines b_s (log w~ units) for the scalar control variates.
std::vector<double> baselines(const std::vector<double>& lw, const ObjectiveConfig& config,
                              double psi, Direction direction) {
  const double ref = config.logZref.value_or(0.0);
  switch (config.cv) {
    case ControlVariate::Learned:
      return std::vector<double>(lw.size(), psi);
    case ControlVariate::Fixed:
      return std::vector<double>(lw.size(), config.fixedC + ref);
    case ControlVariate::LooLogW:
    case ControlVariate::LooLogZ:
      return cvScaling(lw, config.cv).perSample;
    case ControlVariate::LooOptimal:
      break;
  }
  (void)direction;
  return std::vector<double>(lw.size(), 0.0);
}

void scaleOutput(EstimatorOutput& out, double w) {
  out.loss *= w;
  for (auto& c : out.coefficients) {
    c.logQ *= w;
    c.logPB *= w;
    c.psi *= w;
  }
  for (auto& g : out.directGradient) g *= w;
}

void append(EstimatorOutput& into, EstimatorOutput part) {
  into.loss += part.loss;
  into.coefficients.insert(into.coefficients.end(), part.coefficients.begin(), part.coefficients.end());
  if (!part.directGradient.empty()) {
    if (into.directGradient.empty()) {
      into.directGradient = std::move(part.directGradient);
    } else {
      for (std::size_t i = 0; i < into.directGradient.size(); ++i)
        into.directGradient[i] += part.directGradient[i];
    }
  }
}

// Leave-one-out optimal control variate for a score-function estimator whose
// per-sample terms are payoff_s * h_s, h_s = score on `slice`.
std::vector<double> looOptimalGradient(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                                       const std::vector<double>& payoff, const Slice& slice, bool useQ,
                                       std::size_t cap) {
  std::vector<double> direct(view.params().size(), 0.0);
  if (slice.empty()) return direct;
  if (slice.size > cap)
    throw Error(ErrorCode::InvalidArgument, "LOO_opt parameter count exceeds the configured cap");
  const std::size_t S = batch.size();
  std::vector<std::vector<double>> G(S), H(S);
  for (std::size_t s = 0; s < S; ++s) {
    auto full = useQ ? logQGradient(view, batch[s].path) : logPBGradient(view, batch[s].path);
    H[s].assign(full.begin() + static_cast<std::ptrdiff_t>(slice.offset),
                full.begin() + static_cast<std::ptrdiff_t>(slice.end()));
    G[s].resize(slice.size);
    for (std::size_t d = 0; d < slice.size; ++d) G[s][d] = payoff[s] * H[s][d];
  }
  auto c = cvOptimalScaling(G, H);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t d = 0; d < slice.size; ++d)
      direct[slice.offset + d] += (G[s][d] - c[s][d] * H[s][d]) / static_cast<double>(S);
  return direct;
}

std::vector<std::size_t> drawMixture(const ObjectiveConfig& config, const SamplingContext& ctx,
                                     std::size_t& numBackward) {
  const auto S = static_cast<std::size_t>(config.batchSize);
  std::vector<std::size_t> isBackward(S, 0);
  if (config.mixing == Mixing::Deterministic) {
    numBackward = backwardShare(config.alpha, config.batchSize);
    for (std::size_t k = S - numBackward; k < S; ++k) isBackward[k] = 1;
  } else {
    numBackward = 0;
    for (std::size_t k = 0; k < S; ++k) {
      Rng rng(ctx.seed, StreamTag::MixtureSelect, ctx.step, k);
      isBackward[k] = rng.bernoulli(config.alpha) ? 1 : 0;
      numBackward += isBackward[k];
    }
  }
  return isBackward;
}

StepResult drawBatch(const ObjectiveConfig& config, const SamplingContext& ctx) {
  if (ctx.view == nullptr || ctx.target == nullptr)
    throw Error(ErrorCode::InvalidArgument, "sampling context is incomplete");
  std::size_t numBackward = 0;
  drawMixture(config, ctx, numBackward);
  const auto S = static_cast<std::size_t>(config.batchSize);
  StepResult result;
  result.numForward = S - numBackward;
  result.batch.reserve(S);
  for (std::size_t k = 0; k < result.numForward; ++k) {
    Rng rng(ctx.seed, StreamTag::ForwardSample, ctx.step, k);
    result.batch.push_back(sampleForward(*ctx.view, *ctx.target, rng));
  }
  for (std::size_t k = 0; k < numBackward; ++k) {
    Rng rng(ctx.seed, StreamTag::BackwardSample, ctx.step, k);
    result.batch.push_back(sampleBackward(*ctx.view, *ctx.target, ctx.sampler, rng));
  }
  return result;
}

std::pair<double, double> mixtureWeights(const ObjectiveConfig& config, std::size_t numForward,
                                         std::size_t numBackward) {
  if (config.mixing == Mixing::Deterministic) return {1.0 - config.alpha, config.alpha};
  const double S = static_cast<double>(numForward + numBackward);
  return {static_cast<double>(numForward) / S, static_cast<double>(numBackward) / S};
}

void dropBackwardCoefficients(const ObjectiveConfig& config, EstimatorOutput& out) {
  if (config.paramMode != ParamMode::FixedBackward) return;
  for (auto& c : out.coefficients) c.logPB = 0.0;
}

}  // namespace

Family parseFamily(const std::string& name) {
  if (name == "alpha_tb" || name == "tb" || name == "atb") return Family::AlphaTB;
  if (name == "alpha_kl" || name == "kl" || name == "akl") return Family::AlphaKL;
  throw Error(ErrorCode::ConfigError, "unknown objective family: " + name);
}

ControlVariate parseControlVariate(const std::string& name) {
  if (name == "lrn" || name == "learned") return ControlVariate::Learned;
  if (name == "loo_logw") return ControlVariate::LooLogW;
  if (name == "loo_logz") return ControlVariate::LooLogZ;
  if (name == "loo_opt") return ControlVariate::LooOptimal;
  if (name == "fixed") return ControlVariate::Fixed;
  throw Error(ErrorCode::ConfigError, "unknown control variate: " + name);
}

ParamMode parseParamMode(const std::string& name) {
  if (name == "distinct") return ParamMode::Distinct;
  if (name == "shared") return ParamMode::SharedBackward;
  if (name == "fixed") return ParamMode::FixedBackward;
  throw Error(ErrorCode::ConfigError, "unknown param mode: " + name);
}

Mixing parseMixing(const std::string& name) {
  if (name == "deterministic") return Mixing::Deterministic;
  if (name == "bernoulli") return Mixing::Bernoulli;
  throw Error(ErrorCode::ConfigError, "unknown mixing: " + name);
}

std::string familyName(Family f) { return f == Family::AlphaTB ? "alpha_tb" : "alpha_kl"; }

std::string controlVariateName(ControlVariate cv) {
  switch (cv) {
    case ControlVariate::Learned: return "lrn";
    case ControlVariate::LooLogW: return "loo_logw";
    case ControlVariate::LooLogZ: return "loo_logz";
    case ControlVariate::LooOptimal: return "loo_opt";
    case ControlVariate::Fixed: return "fixed";
  }
  return "?";
}

void ObjectiveConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::ConfigError, "alpha must lie in [0, 1]");
  if (batchSize < 1) throw Error(ErrorCode::ConfigError, "batch size must be positive");
  if (family == Family::AlphaTB && cv == ControlVariate::LooOptimal)
    throw Error(ErrorCode::ConfigError, "loo_opt is only defined for alpha_kl");
  if (!std::isfinite(fixedC)) throw Error(ErrorCode::ConfigError, "fixed scaling must be finite");
  const int minPerSide = cv == ControlVariate::LooOptimal ? 3
                         : (cv == ControlVariate::LooLogW || cv == ControlVariate::LooLogZ) ? 2 : 1;
  if (mixing == Mixing::Deterministic) {
    const auto nb = static_cast<int>(backwardShare(alpha, batchSize));
    const int nf = batchSize - nb;
    if ((nf > 0 && nf < minPerSide) || (nb > 0 && nb < minPerSide))
      throw Error(ErrorCode::BatchTooSmall, "batch too small for the chosen control variate");
  } else if (minPerSide > 1) {
    throw Error(ErrorCode::ConfigError, "leave-one-out control variates need deterministic mixing");
  }
}

double tbLoss(const WeightedTrajectory& tau, double psi) {
  const double delta = psi + tau.logQ - tau.logR - tau.logPB;
  if (!std::isfinite(delta)) throw Error(ErrorCode::NonFiniteLoss, "non-finite TB loss");
  return delta * delta;
}

EstimatorOutput tbGradientBatch(std::span<const WeightedTrajectory> batch, double psi,
                                const std::vector<double>* base) {
  EstimatorOutput out;
  if (batch.empty()) return out;
  const double invS = 1.0 / static_cast<double>(batch.size());
  out.coefficients.reserve(batch.size());
  double cSum = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const double lw = batch[s].logWeight();
    const double delta = psi - lw;
    checkResidual(delta);
    const double b = base ? (*base)[s] : psi;
    const double payoff = b - lw;
    checkResidual(payoff);
    out.loss += delta * delta * invS;
    out.coefficients.push_back({2.0 * payoff * invS, -2.0 * payoff * invS, 2.0 * delta * invS});
    cSum += b;
  }
  out.diagnostics = computeDiagnostics(batch);
  out.diagnostics.cUsed = cSum * invS;
  return out;
}

CvScaling cvScaling(std::span<const double> logws, ControlVariate kind) {
  const std::size_t S = logws.size();
  if (S < 2) throw Error(ErrorCode::BatchTooSmall, "leave-one-out scaling needs at least two samples");
  CvScaling out;
  out.perSample.resize(S);
  const double n = static_cast<double>(S - 1);
  if (kind == ControlVariate::LooLogW) {
    const double total = std::accumulate(logws.begin(), logws.end(), 0.0);
    for (std::size_t s = 0; s < S; ++s) out.perSample[s] = (total - logws[s]) / n;
    out.fullMean = total / static_cast<double>(S);
    out.rescale = static_cast<double>(S) / n;
  } else if (kind == ControlVariate::LooLogZ) {
    std::vector<double> others(S - 1);
    for (std::size_t s = 0; s < S; ++s) {
      std::size_t j = 0;
      for (std::size_t t = 0; t < S; ++t)
        if (t != s) others[j++] = logws[t];
      out.perSample[s] = logSumExp(others) - std::log(n);
    }
    out.fullMean = logSumExp(logws) - std::log(static_cast<double>(S));
  } else {
    throw Error(ErrorCode::InvalidArgument, "cvScaling handles loo_logw and loo_logz only");
  }
  return out;
}

std::vector<std::vector<double>> cvOptimalScaling(const std::vector<std::vector<double>>& G,
                                                  const std::vector<std::vector<double>>& H) {
  const std::size_t S = G.size();
  if (S < 3) throw Error(ErrorCode::BatchTooSmall, "LOO_opt needs at least three samples");
  if (H.size() != S) throw Error(ErrorCode::DimensionMismatch, "g and h sample counts differ");
  const std::size_t D = G[0].size();
  for (std::size_t s = 0; s < S; ++s)
    if (G[s].size() != D || H[s].size() != D)
      throw Error(ErrorCode::DimensionMismatch, "ragged per-sample gradients");
  std::vector<std::vector<double>> c(S, std::vector<double>(D, 0.0));
  const double n = static_cast<double>(S - 1);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t s = 0; s < S; ++s) {
      double mg = 0.0, mh = 0.0;
      for (std::size_t t = 0; t < S; ++t) {
        if (t == s) continue;
        mg += G[t][d];
        mh += H[t][d];
      }
      mg /= n;
      mh /= n;
      double cov = 0.0, var = 0.0;
      for (std::size_t t = 0; t < S; ++t) {
        if (t == s) continue;
        const double dh = H[t][d] - mh;
        cov += (G[t][d] - mg) * dh;
        var += dh * dh;
      }
      cov /= n - 1.0;
      var /= n - 1.0;
      c[s][d] = var < 1e-18 ? 0.0 : cov / var;
    }
  }
  return c;
}

EstimatorOutput rklGradientBatch(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                                 const ObjectiveConfig& config) {
  EstimatorOutput out;
  if (batch.empty()) return out;
  requireProvenance(batch, Provenance::Forward, ErrorCode::RequiresForwardSamples);
  const auto lw = logWeights(batch);
  checkLogWeights(lw);
  const std::size_t S = batch.size();
  const double invS = 1.0 / static_cast<double>(S);
  const double psi = view.psi();
  const double ref = config.logZref.value_or(0.0);
  out.coefficients.resize(S);
  out.diagnostics = computeDiagnostics(batch);

  if (config.cv == ControlVariate::LooOptimal) {
    std::vector<double> payoff(S);
    for (std::size_t s = 0; s < S; ++s) payoff[s] = -(lw[s] - ref);
    out.directGradient =
        looOptimalGradient(view, batch, payoff, view.policy().phi(), true, config.looOptimalCap);
    for (std::size_t s = 0; s < S; ++s) out.coefficients[s].logPB = -invS;
    out.diagnostics.cUsed = 0.0;
  } else if (config.cv == ControlVariate::LooLogW) {
    // Full-mean form: sum_s (m - lw_s) / (S - 1), identical to the LOO mean.
    const auto cv = cvScaling(lw, ControlVariate::LooLogW);
    for (std::size_t s = 0; s < S; ++s)
      out.coefficients[s] = {(cv.fullMean - lw[s]) * cv.rescale * invS, -invS, 0.0};
    out.diagnostics.cUsed = cv.fullMean;
  } else {
    const auto b = baselines(lw, config, psi, Direction::Forward);
    double cSum = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      out.coefficients[s] = {(b[s] - lw[s]) * invS, -invS, 0.0};
      cSum += b[s];
    }
    out.diagnostics.cUsed = cSum * invS;
  }
  // Reverse KL up to its constant: E_Q[log Q - log R - log P_B] + log Z.
  for (std::size_t s = 0; s < S; ++s) out.loss += -(lw[s] - ref) * invS;
  if (config.cv == ControlVariate::Learned) {
    for (std::size_t s = 0; s < S; ++s) {
      const double delta = psi - lw[s];
      checkResidual(delta);
      out.coefficients[s].psi = 2.0 * delta * invS;
    }
  }
  return out;
}

EstimatorOutput fklGradientBatch(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                                 const ObjectiveConfig& config) {
  EstimatorOutput out;
  if (batch.empty()) return out;
  requireProvenance(batch, Provenance::Backward, ErrorCode::RequiresBackwardSamples);
  const auto lw = logWeights(batch);
  checkLogWeights(lw);
  const std::size_t S = batch.size();
  const double invS = 1.0 / static_cast<double>(S);
  const double psi = view.psi();
  const double ref = config.logZref.value_or(0.0);
  out.coefficients.resize(S);
  out.diagnostics = computeDiagnostics(batch);

  if (config.cv == ControlVariate::LooOptimal) {
    std::vector<double> payoff(S);
    for (std::size_t s = 0; s < S; ++s) payoff[s] = lw[s] - ref;
    const Slice& scoreSlice = view.policy().backwardMode() == BackwardMode::SharedWithForward
                                  ? view.policy().phi()
                                  : view.policy().theta();
    out.directGradient = looOptimalGradient(view, batch, payoff, scoreSlice, false, config.looOptimalCap);
    for (std::size_t s = 0; s < S; ++s) out.coefficients[s].logQ = -invS;
    out.diagnostics.cUsed = 0.0;
  } else if (config.cv == ControlVariate::LooLogW) {
    const auto cv = cvScaling(lw, ControlVariate::LooLogW);
    for (std::size_t s = 0; s < S; ++s)
      out.coefficients[s] = {-invS, (lw[s] - cv.fullMean) * cv.rescale * invS, 0.0};
    out.diagnostics.cUsed = cv.fullMean;
  } else {
    const auto b = baselines(lw, config, psi, Direction::Backward);
    double cSum = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      out.coefficients[s] = {-invS, (lw[s] - b[s]) * invS, 0.0};
      cSum += b[s];
    }
    out.diagnostics.cUsed = cSum * invS;
  }
  // Forward KL up to its constant: E_P[log R + log P_B - log Q] - log Z.
  for (std::size_t s = 0; s < S; ++s) out.loss += (lw[s] - ref) * invS;
  if (config.cv == ControlVariate::Learned) {
    for (std::size_t s = 0; s < S; ++s) {
      const double delta = psi - lw[s];
      checkResidual(delta);
      out.coefficients[s].psi = 2.0 * delta * invS;
    }
  }
  return out;
}

EstimatorOutput sharedParamGradient(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                                    Family family, Direction direction, const ObjectiveConfig& config) {
  if (view.policy().backwardMode() != BackwardMode::SharedWithForward)
    throw Error(ErrorCode::WrongParamMode, "policy does not share forward and backward parameters");
  if (family == Family::AlphaTB) {
    if (config.cv == ControlVariate::Learned) return tbGradientBatch(batch, view.psi());
    const auto lw = logWeights(batch);
    const auto b = baselines(lw, config, view.psi(), direction);
    return tbGradientBatch(batch, view.psi(), &b);
  }
  return direction == Direction::Forward ? rklGradientBatch(view, batch, config)
                                         : fklGradientBatch(view, batch, config);
}

void accumulateGradient(const PolicyView& view, std::span<const WeightedTrajectory> batch,
                        const EstimatorOutput& estimate, std::span<double> grad) {
  if (estimate.coefficients.size() != batch.size())
    throw Error(ErrorCode::DimensionMismatch, "coefficient count does not match batch size");
  if (grad.size() != view.params().size())
    throw Error(ErrorCode::DimensionMismatch, "gradient buffer has the wrong length");
  ScoreAccumulator acc(view);
  double psiGrad = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& c = estimate.coefficients[s];
    if (!std::isfinite(c.logQ) || !std::isfinite(c.logPB) || !std::isfinite(c.psi))
      throw Error(ErrorCode::NonFiniteGradient, "non-finite estimator coefficient");
    if (c.logQ != 0.0) acc.addLogQ(batch[s].path, c.logQ);
    if (c.logPB != 0.0) acc.addLogPB(batch[s].path, c.logPB);
    psiGrad += c.psi;
  }
  acc.flush(grad);
  grad[view.policy().psiIndex()] += psiGrad;
  if (!estimate.directGradient.empty()) {
    if (estimate.directGradient.size() != grad.size())
      throw Error(ErrorCode::DimensionMismatch, "direct gradient has the wrong length");
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += estimate.directGradient[i];
  }
  for (double g : grad)
    if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient");
}

std::size_t backwardShare(double alpha, int batchSize) {
  const auto S = static_cast<long>(batchSize);
  long nb = std::lround(alpha * static_cast<double>(S));
  if (alpha > 0.0 && alpha < 1.0 && S >= 2) nb = std::clamp(nb, 1L, S - 1);
  return static_cast<std::size_t>(std::clamp(nb, 0L, S));
}

StepResult alphaTbStep(const ObjectiveConfig& config, const SamplingContext& ctx) {
  config.validate();
  StepResult result = drawBatch(config, ctx);
  const std::span<const WeightedTrajectory> all(result.batch);
  const auto fwd = all.subspan(0, result.numForward);
  const auto bwd = all.subspan(result.numForward);
  const double psi = ctx.view->psi();

  auto part = [&](std::span<const WeightedTrajectory> sub, Direction dir) {
    if (config.cv == ControlVariate::Learned) return tbGradientBatch(sub, psi);
    auto lw = logWeights(sub);
    checkLogWeights(lw);
    auto b = baselines(lw, config, psi, dir);
    return tbGradientBatch(sub, psi, &b);
  };

  const auto [wf, wb] = mixtureWeights(config, fwd.size(), bwd.size());
  EstimatorOutput est;
  if (!fwd.empty()) {
    auto f = part(fwd, Direction::Forward);
    scaleOutput(f, wf);
    append(est, std::move(f));
  }
  if (!bwd.empty()) {
    auto b = part(bwd, Direction::Backward);
    scaleOutput(b, wb);
    append(est, std::move(b));
  }
  est.diagnostics = computeDiagnostics(fwd.empty() ? all : fwd);
  dropBackwardCoefficients(config, est);
  result.estimate = std::move(est);
  return result;
}

StepResult alphaKlStep(const ObjectiveConfig& config, const SamplingContext& ctx) {
  config.validate();
  StepResult result = drawBatch(config, ctx);
  const std::span<const WeightedTrajectory> all(result.batch);
  const auto fwd = all.subspan(0, result.numForward);
  const auto bwd = all.subspan(result.numForward);

  const auto [wf, wb] = mixtureWeights(config, fwd.size(), bwd.size());
  EstimatorOutput est;
  Diagnostics diag{};
  if (!fwd.empty()) {
    auto f = rklGradientBatch(*ctx.view, fwd, config);
    diag = f.diagnostics;
    scaleOutput(f, wf);
    append(est, std::move(f));
  }
  if (!bwd.empty()) {
    auto b = fklGradientBatch(*ctx.view, bwd, config);
    if (fwd.empty()) diag = b.diagnostics;
    scaleOutput(b, wb);
    append(est, std::move(b));
  }
  est.diagnostics = diag;
  dropBackwardCoefficients(config, est);
  result.estimate = std::move(est);
  return result;
}

StepResult objectiveStep(const ObjectiveConfig& config, const SamplingContext& ctx) {
  return config.family == Family::AlphaTB ? alphaTbStep(config, ctx) : alphaKlStep(config, ctx);
}

Diagnostics computeDiagnostics(std::span<const WeightedTrajectory> batch) {
  Diagnostics d;
  if (batch.empty()) return d;
  const auto lw = logWeights(batch);
  const double S = static_cast<double>(lw.size());
  d.meanLogW = std::accumulate(lw.begin(), lw.end(), 0.0) / S;
  double ss = 0.0;
  for (double v : lw) ss += (v - d.meanLogW) * (v - d.meanLogW);
  d.varLogW = lw.size() > 1 ? ss / (S - 1.0) : 0.0;
  std::vector<double> twice(lw.size());
  for (std::size_t i = 0; i < lw.size(); ++i) twice[i] = 2.0 * lw[i];
  const double a = logSumExp(lw);
  const double b = logSumExp(twice);
  d.ess = std::isfinite(a) ? std::exp(2.0 * a - b) : 0.0;
  return d;
}

}  // namespace gfnvi
