#include "gfnvi/nnet.hpp"

#include <cmath>
#include <utility>

#include "gfnvi/error.hpp"

namespace gfnvi {

namespace {

constexpr double kLeakySlope = 0.01;

double activate(Activation a, double z) {
  if (a == Activation::Tanh) return std::tanh(z);
  return z > 0.0 ? z : kLeakySlope * z;
}

// Derivative expressed through the pre-activation z and the output y.
double activationDerivative(Activation a, double z, double y) {
  if (a == Activation::Tanh) return 1.0 - y * y;
  return z > 0.0 ? 1.0 : kLeakySlope;
}

}  // namespace

Activation parseActivation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "leaky_relu" || name == "leakyrelu") return Activation::LeakyRelu;
  throw Error(ErrorCode::ConfigError, "unknown activation '" + name + "'");
}

std::string activationName(Activation a) { return a == Activation::Tanh ? "tanh" : "leaky_relu"; }

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  if (spec_.inputDim <= 0 || spec_.outputDim <= 0) {
    throw Error(ErrorCode::InvalidArgument, "MLP input and output dimensions must be positive");
  }
  int in = spec_.inputDim;
  std::size_t offset = 0;
  auto addLayer = [&](int out) {
    if (out <= 0) throw Error(ErrorCode::InvalidArgument, "hidden widths must be positive");
    layers_.push_back({in, out, offset});
    offset += static_cast<std::size_t>(in) * out + out;
    in = out;
  };
  for (int width : spec_.hidden) addLayer(width);
  addLayer(spec_.outputDim);
  parameterCount_ = offset;
}

void Mlp::initialize(std::span<double> params, Rng& rng) const {
  if (params.size() != parameterCount_) {
    throw Error(ErrorCode::DimensionMismatch, "parameter slice has wrong length");
  }
  for (const Layer& layer : layers_) {
    const double a = spec_.initScale * std::sqrt(6.0 / (layer.in + layer.out));
    const std::size_t nw = static_cast<std::size_t>(layer.in) * layer.out;
    for (std::size_t k = 0; k < nw; ++k) params[layer.offset + k] = a * (2.0 * rng.uniform() - 1.0);
    for (int k = 0; k < layer.out; ++k) params[layer.offset + nw + k] = 0.0;
  }
}

void Mlp::checkShapes(std::span<const double> params, std::span<const double> x) const {
  if (params.size() != parameterCount_) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(parameterCount_) +
                                                  " parameters, got " + std::to_string(params.size()));
  }
  if (x.size() != static_cast<std::size_t>(spec_.inputDim)) {
    throw Error(ErrorCode::DimensionMismatch, "expected input of length " +
                                                  std::to_string(spec_.inputDim));
  }
}

std::vector<double> Mlp::forward(std::span<const double> params, std::span<const double> x) const {
  checkShapes(params, x);
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const double* w = params.data() + layer.offset;
    const double* b = w + static_cast<std::size_t>(layer.in) * layer.out;
    next.assign(layer.out, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      double z = b[o];
      const double* row = w + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) z += row[i] * cur[i];
      next[o] = (l + 1 < layers_.size()) ? activate(spec_.activation, z) : z;
    }
    std::swap(cur, next);
  }
  return cur;
}

std::vector<double> Mlp::backward(std::span<const double> params, std::span<const double> x,
                                  std::span<const double> upstream,
                                  std::span<double> paramGrad) const {
  checkShapes(params, x);
  if (upstream.size() != static_cast<std::size_t>(spec_.outputDim)) {
    throw Error(ErrorCode::DimensionMismatch, "upstream gradient has wrong length");
  }
  if (paramGrad.size() != parameterCount_) {
    throw Error(ErrorCode::DimensionMismatch, "gradient slice has wrong length");
  }

  // Forward pass keeping pre-activations and outputs of every layer.
  std::vector<std::vector<double>> pre(layers_.size());
  std::vector<std::vector<double>> out(layers_.size() + 1);
  out[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const double* w = params.data() + layer.offset;
    const double* b = w + static_cast<std::size_t>(layer.in) * layer.out;
    pre[l].assign(layer.out, 0.0);
    out[l + 1].assign(layer.out, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      double z = b[o];
      const double* row = w + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) z += row[i] * out[l][i];
      pre[l][o] = z;
      out[l + 1][o] = (l + 1 < layers_.size()) ? activate(spec_.activation, z) : z;
    }
  }

  std::vector<double> delta(upstream.begin(), upstream.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    if (l + 1 < layers_.size()) {
      for (int o = 0; o < layer.out; ++o) {
        delta[o] *= activationDerivative(spec_.activation, pre[l][o], out[l + 1][o]);
      }
    }
    const double* w = params.data() + layer.offset;
    double* gw = paramGrad.data() + layer.offset;
    double* gb = gw + static_cast<std::size_t>(layer.in) * layer.out;
    std::vector<double> prev(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      const double* row = w + static_cast<std::size_t>(o) * layer.in;
      double* grow = gw + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        grow[i] += d * out[l][i];
        prev[i] += d * row[i];
      }
    }
    delta = std::move(prev);
  }
  return delta;
}

MlpGradients backward(const Mlp& net, std::span<const double> params, std::span<const double> x,
                      std::span<const double> upstream) {
  MlpGradients g;
  g.params.assign(net.parameterCount(), 0.0);
  g.input = net.backward(params, x, upstream, g.params);
  return g;
}

Layout Layout::make(std::size_t phiCount, std::size_t thetaCount, std::size_t xiCount) {
  Layout l;
  l.phi = {0, phiCount};
  l.theta = {l.phi.end(), thetaCount};
  l.psi = {l.theta.end(), 1};
  l.xi = {l.psi.end(), xiCount};
  return l;
}

ParameterStore::ParameterStore(Layout layout) : layout_(layout), values_(layout.total(), 0.0) {}

bool ParameterStore::allFinite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void GradientBuffer::add(std::span<const double> grad, double scale) {
  if (grad.size() != values_.size()) throw Error(ErrorCode::DimensionMismatch, "gradient length");
  for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += scale * grad[k];
  ++count_;
}

void GradientBuffer::merge(const GradientBuffer& other) {
  if (other.values_.size() != values_.size()) throw Error(ErrorCode::DimensionMismatch, "gradient length");
  for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += other.values_[k];
  count_ += other.count_;
}

void GradientBuffer::clear() {
  std::fill(values_.begin(), values_.end(), 0.0);
  count_ = 0;
}

bool GradientBuffer::allFinite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Optimizer::Optimizer(OptimizerConfig config, Slice slice)
    : config_(config), slice_(slice), m_(slice.size, 0.0), v_(slice.size, 0.0) {}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() < slice_.end() || grad.size() < slice_.end()) {
    throw Error(ErrorCode::DimensionMismatch, "optimizer slice exceeds parameter vector");
  }
  for (std::size_t k = slice_.offset; k < slice_.end(); ++k) {
    if (!std::isfinite(grad[k])) {
      throw Error(ErrorCode::NonFiniteGradient, "entry " + std::to_string(k));
    }
  }
  ++steps_;
  if (config_.method == OptimizerConfig::Method::Sgd) {
    for (std::size_t k = slice_.offset; k < slice_.end(); ++k) params[k] -= config_.lr * grad[k];
    return;
  }
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < slice_.size; ++k) {
    const double g = grad[slice_.offset + k];
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g;
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g * g;
    const double mhat = m_[k] / c1;
    const double vhat = v_[k] / c2;
    params[slice_.offset + k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
  }
}

}  // namespace gfnvi
