#pragma once

// Dense feed-forward networks evaluated against externally owned flat
// parameter vectors, plus the parameter store, gradient buffer and optimizers.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gfnvi/rng.hpp"

namespace gfnvi {

enum class Activation { Tanh, LeakyRelu };

Activation parseActivation(const std::string& name);
std::string activationName(Activation a);

struct MlpSpec {
  int inputDim = 1;
  std::vector<int> hidden;
  int outputDim = 1;
  Activation activation = Activation::Tanh;
  double initScale = 1.0;
};

/// Parameters are laid out layer by layer: weights (out x in, row-major) then
/// biases. The network never owns its parameters.
class Mlp {
 public:
  explicit Mlp(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  std::size_t parameterCount() const { return parameterCount_; }

  /// Uniform(-a, a) weights with a = initScale * sqrt(6 / (fan_in + fan_out)); zero biases.
  void initialize(std::span<double> params, Rng& rng) const;

  std::vector<double> forward(std::span<const double> params, std::span<const double> x) const;

  /// Adds d<upstream, forward(x)>/dparams into `paramGrad` and returns the
  /// gradient with respect to x.
  std::vector<double> backward(std::span<const double> params, std::span<const double> x,
                               std::span<const double> upstream, std::span<double> paramGrad) const;

 private:
  struct Layer {
    int in;
    int out;
    std::size_t offset;  // weights; biases follow at offset + in*out
  };

  void checkShapes(std::span<const double> params, std::span<const double> x) const;

  MlpSpec spec_;
  std::vector<Layer> layers_;
  std::size_t parameterCount_ = 0;
};

struct MlpGradients {
  std::vector<double> params;
  std::vector<double> input;
};

MlpGradients backward(const Mlp& net, std::span<const double> params, std::span<const double> x,
                      std::span<const double> upstream);

struct Slice {
  std::size_t offset = 0;
  std::size_t size = 0;

  std::size_t end() const { return offset + size; }
  bool empty() const { return size == 0; }
  friend bool operator==(const Slice&, const Slice&) = default;
};

/// Fixed slice order: phi | theta | psi | xi. psi is a single scalar holding log Z_psi.
struct Layout {
  Slice phi;
  Slice theta;
  Slice psi;
  Slice xi;

  static Layout make(std::size_t phiCount, std::size_t thetaCount, std::size_t xiCount);
  std::size_t total() const { return xi.end(); }
  friend bool operator==(const Layout&, const Layout&) = default;
};

class ParameterStore {
 public:
  explicit ParameterStore(Layout layout);

  const Layout& layout() const { return layout_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> view(const Slice& s) { return std::span<double>(values_).subspan(s.offset, s.size); }
  std::span<const double> view(const Slice& s) const {
    return std::span<const double>(values_).subspan(s.offset, s.size);
  }

  double psi() const { return values_[layout_.psi.offset]; }
  void setPsi(double v) { values_[layout_.psi.offset] = v; }
  bool allFinite() const;

 private:
  Layout layout_;
  std::vector<double> values_;
};

/// Gradient accumulator aligned with a ParameterStore.
class GradientBuffer {
 public:
  explicit GradientBuffer(std::size_t size) : values_(size, 0.0) {}

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t count() const { return count_; }

  /// Adds one contribution (counted once).
  void add(std::span<const double> grad, double scale = 1.0);
  void merge(const GradientBuffer& other);
  void clear();
  bool allFinite() const;

 private:
  std::vector<double> values_;
  std::size_t count_ = 0;
};

struct OptimizerConfig {
  enum class Method { Sgd, Adam };
  Method method = Method::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First-order optimizer over one contiguous slice of the parameter vector.
/// Entries outside the slice are never touched.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, Slice slice);

  /// Throws NonFiniteGradient (leaving params unchanged) on any non-finite entry.
  void step(std::span<double> params, std::span<const double> grad);

  const Slice& slice() const { return slice_; }
  long stepCount() const { return steps_; }

 private:
  OptimizerConfig config_;
  Slice slice_;
  std::vector<double> m_;
  std::vector<double> v_;
  long steps_ = 0;
};

}  // namespace gfnvi
